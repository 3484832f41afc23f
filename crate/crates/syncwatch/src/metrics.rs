//! Threshold-free ranking metrics: average precision, ROC AUC, and top-k
//! temporal localization accuracy.
//!
//! Tie policy is explicit because scores can tie: average precision ranks
//! fakes after reals within a tied score (pessimistic), and AUC counts tied
//! (fake, real) pairs as half a win.

use crate::error::{Error, Result};

/// Binary label for a scored item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Real,
    Fake,
}

/// A set of (score, label) pairs. Higher score means more likely fake.
#[derive(Debug, Clone, Default)]
pub struct LabeledScores {
    items: Vec<(f64, Label)>,
}

impl LabeledScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64, label: Label) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::EmptyInput(format!("non-finite score {score}")));
        }
        self.items.push((score, label));
        Ok(())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Label)>) -> Result<Self> {
        let mut ls = Self::new();
        for (s, l) in pairs {
            ls.push(s, l)?;
        }
        Ok(ls)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.items.iter().filter(|(_, l)| *l == Label::Real).count()
    }

    pub fn n_fake(&self) -> usize {
        self.items.iter().filter(|(_, l)| *l == Label::Fake).count()
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.n_real() == 0 || self.n_fake() == 0 {
            return Err(Error::EmptyInput(
                "metrics need at least one real and one fake item".into(),
            ));
        }
        Ok(())
    }
}

/// Average precision: mean of precision at each positive's rank after sorting
/// by score descending, with tied fakes ranked after tied reals.
pub fn average_precision(ls: &LabeledScores) -> Result<f64> {
    ls.require_both_classes()?;
    let mut sorted = ls.items.clone();
    sorted.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| rank_key(a.1).cmp(&rank_key(b.1)))
    });
    let mut positives_seen = 0usize;
    let mut sum = 0.0;
    for (rank0, (_, label)) in sorted.iter().enumerate() {
        if *label == Label::Fake {
            positives_seen += 1;
            sum += positives_seen as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / positives_seen as f64)
}

fn rank_key(l: Label) -> u8 {
    match l {
        Label::Real => 0,
        Label::Fake => 1,
    }
}

/// ROC AUC as the Mann-Whitney statistic: the fraction of (fake, real) pairs
/// where the fake scores strictly higher, ties counting one half.
pub fn roc_auc(ls: &LabeledScores) -> Result<f64> {
    ls.require_both_classes()?;
    let fakes: Vec<f64> = ls
        .items
        .iter()
        .filter(|(_, l)| *l == Label::Fake)
        .map(|(s, _)| *s)
        .collect();
    let reals: Vec<f64> = ls
        .items
        .iter()
        .filter(|(_, l)| *l == Label::Real)
        .map(|(s, _)| *s)
        .collect();
    let mut wins = 0.0f64;
    for &f in &fakes {
        for &r in &reals {
            if f > r {
                wins += 1.0;
            } else if f == r {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (fakes.len() * reals.len()) as f64)
}

/// Indices of the `k` largest frame scores, ties toward earlier frames.
pub fn localize(frame_scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(frame_scores.len());
    let mut idx: Vec<usize> = (0..frame_scores.len()).collect();
    idx.sort_by(|&a, &b| {
        frame_scores[b]
            .partial_cmp(&frame_scores[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// True when any of the top-k frames falls inside `[start, end)`.
pub fn localization_hit(frame_scores: &[f64], interval: (usize, usize), k: usize) -> bool {
    localize(frame_scores, k)
        .into_iter()
        .any(|i| i >= interval.0 && i < interval.1)
}

/// Fraction of (frame_scores, interval) reports whose top-k frames hit the
/// annotated interval.
pub fn localization_accuracy(reports: &[(Vec<f64>, (usize, usize))], k: usize) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no localization reports".into()));
    }
    let hits = reports
        .iter()
        .filter(|(scores, interval)| localization_hit(scores, *interval, k))
        .count();
    Ok(hits as f64 / reports.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;
    use rand::Rng;

    fn ls(scores: &[f64], labels: &[u8]) -> LabeledScores {
        LabeledScores::from_pairs(scores.iter().zip(labels).map(|(&s, &l)| {
            (s, if l == 1 { Label::Fake } else { Label::Real })
        }))
        .unwrap()
    }

    #[test]
    fn ap_perfect_ranking() {
        let s = ls(&[0.9, 0.8, 0.2], &[1, 1, 0]);
        assert_eq!(average_precision(&s).unwrap(), 1.0);
    }

    #[test]
    fn ap_hand_enumerated() {
        // Ranking: 0.9 (real), 0.8 (fake), 0.2 (fake).
        // Precisions at positives: 1/2 and 2/3; AP = 7/12.
        let s = ls(&[0.9, 0.8, 0.2], &[0, 1, 1]);
        assert!((average_precision(&s).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn ap_positives_below_single_negative() {
        // P positives all below 1 negative: AP = mean of r/(r+1).
        for p in 1..6usize {
            let mut scores = vec![1.0];
            let mut labels = vec![0u8];
            for i in 0..p {
                scores.push(0.5 - i as f64 * 0.01);
                labels.push(1);
            }
            let want: f64 =
                (1..=p).map(|r| r as f64 / (r + 1) as f64).sum::<f64>() / p as f64;
            assert!((average_precision(&ls(&scores, &labels)).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn ap_ties_rank_fakes_after_reals() {
        // One real and one fake tied: fake gets rank 2 -> AP = 1/2.
        let s = ls(&[0.5, 0.5], &[0, 1]);
        assert_eq!(average_precision(&s).unwrap(), 0.5);
    }

    #[test]
    fn auc_separable() {
        let s = ls(&[0.9, 0.7, 0.5], &[1, 1, 0]);
        assert_eq!(roc_auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auc_half_on_split_pair() {
        let s = ls(&[0.9, 0.3, 0.5], &[1, 1, 0]);
        assert_eq!(roc_auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn auc_tie_counts_half() {
        let s = ls(&[0.5, 0.5], &[1, 0]);
        assert_eq!(roc_auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let s = ls(&[0.5, 0.7], &[1, 1]);
        assert!(average_precision(&s).is_err());
        assert!(roc_auc(&s).is_err());
    }

    #[test]
    fn metrics_invariant_under_monotone_transform() {
        let mut rng = seeded_rng(77);
        for _ in 0..50 {
            let n = rng.gen_range(3..10);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
            let a = ls(&scores, &labels);
            let b = ls(&transformed, &labels);
            assert!((average_precision(&a).unwrap() - average_precision(&b).unwrap()).abs() < 1e-12);
            assert!((roc_auc(&a).unwrap() - roc_auc(&b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_complement_under_label_flip() {
        let mut rng = seeded_rng(78);
        for _ in 0..50 {
            let n = rng.gen_range(3..9);
            // Coarse grid forces ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64 / 4.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
            let a = roc_auc(&ls(&scores, &labels)).unwrap();
            let b = roc_auc(&ls(&scores, &flipped)).unwrap();
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn localize_picks_largest() {
        assert_eq!(localize(&[0.0, 0.0, 9.0, 0.0], 1), vec![2]);
    }

    #[test]
    fn localize_tie_prefers_earlier_frames() {
        assert_eq!(localize(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn localize_k_equals_length() {
        assert_eq!(localize(&[0.3, 0.1, 0.2], 3), vec![0, 2, 1]);
    }

    #[test]
    fn localization_accuracy_counts_hits() {
        let reports = vec![
            (vec![0.0, 5.0, 0.0], (1, 2)),
            (vec![5.0, 0.0, 0.0], (1, 2)),
            (vec![0.0, 0.0, 5.0], (2, 3)),
            (vec![0.0, 5.0, 0.0], (2, 3)),
        ];
        assert_eq!(localization_accuracy(&reports, 1).unwrap(), 0.5);
    }

    #[test]
    fn localization_all_hits_and_no_hits() {
        let hit = vec![(vec![0.0, 9.0], (1, 2)); 3];
        assert_eq!(localization_accuracy(&hit, 1).unwrap(), 1.0);
        let miss = vec![(vec![9.0, 0.0], (1, 2)); 3];
        assert_eq!(localization_accuracy(&miss, 1).unwrap(), 0.0);
    }
}
