//! Character error rate, macro class accuracy, letter confusion and ROC.

use serde::Serialize;

use crate::datamodel::{EditCounts, BLANK, NUM_LETTERS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Keep,
    Sub,
    Del,
    Ins,
}

/// Edit counts of a minimum-cost alignment of `pred` onto `gt`.
///
/// Ties between equally cheap alignments are broken towards
/// match/substitution, then deletion, then insertion.
pub fn edit_counts(pred: &[usize], gt: &[usize]) -> EditCounts {
    let (n, m) = (gt.len(), pred.len());
    // cost[i][j]: aligning gt[..i] with pred[..j]
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        cost[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[i - 1][j - 1] + usize::from(gt[i - 1] != pred[j - 1]);
            cost[i][j] = diag.min(cost[i - 1][j] + 1).min(cost[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts {
        reference_length: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let op = if i > 0 && j > 0 && cost[i][j] == cost[i - 1][j - 1] + usize::from(gt[i - 1] != pred[j - 1]) {
            if gt[i - 1] == pred[j - 1] {
                Op::Keep
            } else {
                Op::Sub
            }
        } else if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            Op::Del
        } else {
            Op::Ins
        };
        match op {
            Op::Keep => {
                i -= 1;
                j -= 1;
            }
            Op::Sub => {
                counts.substitutions += 1;
                i -= 1;
                j -= 1;
            }
            Op::Del => {
                counts.deletions += 1;
                i -= 1;
            }
            Op::Ins => {
                counts.insertions += 1;
                j -= 1;
            }
        }
    }
    counts
}

/// `(S + D + I) / N` for one prediction. Not clipped at 1.
pub fn cer(pred: &[usize], gt: &[usize]) -> Result<(f64, EditCounts)> {
    if gt.is_empty() {
        return Err(Error::invalid("CER needs a non-empty ground truth"));
    }
    let counts = edit_counts(pred, gt);
    Ok((counts.cer(), counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CerSummary {
    /// Total edits over total reference characters.
    pub micro: f64,
    /// Mean of per-word CER.
    pub macro_avg: f64,
    pub words: usize,
    pub counts: EditCounts,
}

pub fn corpus_cer<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> Result<CerSummary> {
    let mut total = EditCounts::default();
    let mut sum = 0.0;
    let mut words = 0;
    for (pred, gt) in pairs {
        let (c, counts) = cer(pred, gt)?;
        total = total + counts;
        sum += c;
        words += 1;
    }
    if words == 0 {
        return Err(Error::invalid("no words to score"));
    }
    Ok(CerSummary {
        micro: total.cer(),
        macro_avg: sum / words as f64,
        words,
        counts: total,
    })
}

/// Per-letter recall over frames whose ground truth is a letter.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub correct: [usize; NUM_LETTERS + 1],
    pub total: [usize; NUM_LETTERS + 1],
}

impl ClassAccuracy {
    pub fn from_frames(preds: &[usize], gts: &[usize]) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), gts.len())));
        }
        let mut acc = Self {
            correct: [0; NUM_LETTERS + 1],
            total: [0; NUM_LETTERS + 1],
        };
        for (&p, &g) in preds.iter().zip(gts) {
            if g == BLANK || g > NUM_LETTERS {
                continue;
            }
            acc.total[g] += 1;
            if p == g {
                acc.correct[g] += 1;
            }
        }
        Ok(acc)
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        (self.total[class] > 0).then(|| self.correct[class] as f64 / self.total[class] as f64)
    }

    /// Mean recall over the given classes that occur in the ground truth.
    pub fn mean_over(&self, classes: impl IntoIterator<Item = usize>) -> Option<f64> {
        let recalls: Vec<f64> = classes.into_iter().filter_map(|c| self.recall(c)).collect();
        (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
    }

    pub fn average(&self) -> Option<f64> {
        self.mean_over(1..=NUM_LETTERS)
    }
}

/// Mean over present letter classes of per-class accuracy.
pub fn avg_class_accuracy(preds: &[usize], gts: &[usize]) -> Result<f64> {
    ClassAccuracy::from_frames(preds, gts)?
        .average()
        .ok_or_else(|| Error::invalid("no letter-labeled frames"))
}

/// Letter confusion counts. Rows are ground truth, columns prediction; a
/// prediction of blank on a letter frame is kept in `to_blank`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_LETTERS]; NUM_LETTERS],
    pub to_blank: [usize; NUM_LETTERS],
}

impl ConfusionMatrix {
    pub fn row_total(&self, gt_letter: usize) -> usize {
        self.counts[gt_letter].iter().sum::<usize>() + self.to_blank[gt_letter]
    }

    /// Row-normalised percentages (rows with no frames stay zero).
    pub fn percentages(&self) -> [[f64; NUM_LETTERS]; NUM_LETTERS] {
        let mut out = [[0.0; NUM_LETTERS]; NUM_LETTERS];
        for (r, row) in self.counts.iter().enumerate() {
            let total = self.row_total(r);
            if total > 0 {
                for (c, &n) in row.iter().enumerate() {
                    out[r][c] = 100.0 * n as f64 / total as f64;
                }
            }
        }
        out
    }
}

/// Accumulates `(gt, pred)` over frames whose ground truth is a letter.
pub fn confusion(preds: &[usize], gts: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), gts.len())));
    }
    let mut m = ConfusionMatrix {
        counts: [[0; NUM_LETTERS]; NUM_LETTERS],
        to_blank: [0; NUM_LETTERS],
    };
    for (&p, &g) in preds.iter().zip(gts) {
        if g == BLANK || g > NUM_LETTERS {
            continue;
        }
        if p == BLANK || p > NUM_LETTERS {
            m.to_blank[g - 1] += 1;
        } else {
            m.counts[g - 1][p - 1] += 1;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0,0)` to `(1,1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC sweep at every distinct score and the rank-statistic AUC with
/// mid-ranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ROC needs both positive and negative examples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Mid-ranks (1-based) over ascending scores.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);

    // Threshold sweep from the highest score down.
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let s = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == s {
            if labels[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::datamodel::LetterSeq;

    fn l(s: &str) -> Vec<usize> {
        LetterSeq::parse(s).unwrap().into_inner()
    }

    #[test]
    fn golden_values() {
        let (c, e) = cer(&l("am"), &l("adam")).unwrap();
        assert_eq!(c, 0.5);
        assert_eq!((e.deletions, e.substitutions, e.insertions), (2, 0, 0));
        let (c, e) = cer(&l("torner"), &l("turner")).unwrap();
        assert_eq!(e.substitutions, 1);
        assert!((c - 1.0 / 6.0).abs() < 1e-12);
        assert!((cer(&l("sastey"), &l("dusty")).unwrap().0 - 0.6).abs() < 1e-12);
        assert_eq!(cer(&l("ultin"), &l("ultv")).unwrap().0, 0.5);
        assert_eq!(cer(&l("abc"), &l("abc")).unwrap().0, 0.0);
        let (c, e) = cer(&[], &l("abc")).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(e.deletions, 3);
        assert!(cer(&l("a"), &[]).is_err());
    }

    #[test]
    fn cer_can_exceed_one() {
        assert_eq!(cer(&l("xxxxxx"), &l("ab")).unwrap().0, 3.0);
    }

    /// Plain recursive edit distance.
    fn brute(a: &[usize], b: &[usize]) -> usize {
        match (a, b) {
            ([], _) => b.len(),
            (_, []) => a.len(),
            ([x, ra @ ..], [y, rb @ ..]) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    fn all_strings(max_len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for c in 1..=3 {
                    let mut t: Vec<usize> = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn dp_matches_recursive_oracle() {
        let strings = all_strings(4);
        for pred in &strings {
            for gt in strings.iter().filter(|g| !g.is_empty()) {
                let e = edit_counts(pred, gt);
                assert_eq!(e.errors(), brute(pred, gt), "{pred:?} {gt:?}");
                let matches = gt.len() - e.substitutions - e.deletions;
                assert_eq!(pred.len(), matches + e.substitutions + e.insertions);
                let c = e.cer();
                assert!(c <= pred.len().max(gt.len()) as f64 / gt.len() as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn corpus_micro_and_macro() {
        let pairs = [(l("am"), l("adam")), (l("ab"), l("ab"))];
        let s = corpus_cer(pairs.iter().map(|(p, g)| (p.as_slice(), g.as_slice()))).unwrap();
        assert!((s.micro - 2.0 / 6.0).abs() < 1e-12);
        assert!((s.macro_avg - 0.25).abs() < 1e-12);
    }

    #[test]
    fn class_accuracy_cases() {
        assert_eq!(avg_class_accuracy(&[1, 2, 2], &[1, 2, 2]).unwrap(), 1.0);
        assert_eq!(avg_class_accuracy(&[1, 1, 3], &[1, 1, 2]).unwrap(), 0.5);
        let mut preds = vec![1; 99];
        let mut gts = vec![1; 99];
        preds.push(1);
        gts.push(17);
        assert_eq!(avg_class_accuracy(&preds, &gts).unwrap(), 0.5);
        assert!(avg_class_accuracy(&[], &[]).is_err());
        assert!(avg_class_accuracy(&[0], &[0]).is_err());
    }

    #[test]
    fn confusion_cases() {
        let m = confusion(&[1, 2, 3], &[1, 2, 3]).unwrap();
        for r in 0..26 {
            for c in 0..26 {
                assert_eq!(m.counts[r][c], usize::from(r == c && r < 3));
            }
        }
        let i = 9;
        let o = 15;
        let m = confusion(&[o], &[i]).unwrap();
        assert_eq!(m.counts[i - 1][o - 1], 1);
        assert_eq!(m.counts.iter().flatten().sum::<usize>(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gts: Vec<usize> = (0..500).map(|_| rng.random_range(0..27)).collect();
        let preds: Vec<usize> = (0..500).map(|_| rng.random_range(0..27)).collect();
        let m = confusion(&preds, &gts).unwrap();
        for letter in 1..=26 {
            let hist = gts.iter().filter(|&&g| g == letter).count();
            assert_eq!(m.row_total(letter - 1), hist);
        }
        let pct = m.percentages();
        for r in 0..26 {
            let s: f64 = pct[r].iter().sum::<f64>() + 100.0 * m.to_blank[r] as f64 / m.row_total(r).max(1) as f64;
            assert!(m.row_total(r) == 0 || (s - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn roc_cases() {
        let r = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        let r = roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.5)).collect();
        let r = roc_auc(&scores, &labels).unwrap();
        assert!((r.auc - 0.5).abs() < 0.02);
    }

    #[test]
    fn auc_equals_pair_ordering_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [5usize, 37, 200] {
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        den += 1.0;
                        num += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            let r = roc_auc(&scores, &labels).unwrap();
            assert!((r.auc - num / den).abs() < 1e-12);
            // Trapezoidal area under the exact curve agrees too.
            let trap: f64 = r.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
            assert!((trap - r.auc).abs() < 1e-12);
        }
    }
}
