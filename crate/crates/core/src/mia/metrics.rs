use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a random member outscores a random nonmember, ties
/// counted as one half. Returns `None` when either set is empty.
pub fn auc(members: &[f64], nonmembers: &[f64]) -> Option<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (n1, n0) = (members.len() as f64, nonmembers.len() as f64);
    Some((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// `TPR − FPR`.
pub fn advantage(tpr: f64, fpr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tpr) || !(0.0..=1.0).contains(&fpr) {
        return Err(Error::InvalidArgument(format!(
            "rates must lie in [0, 1], got TPR {tpr}, FPR {fpr}"
        )));
    }
    Ok(tpr - fpr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub auc: f64,
    pub advantage: f64,
    /// Set when some metric had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub const METRICS_CSV_HEADER: &str = "Acc,Prec,TPR,FPR,AUC,ADV";

impl AttackMetrics {
    /// Metrics from hard decisions and continuous decision scores.
    pub fn from_predictions(predicted: &[bool], scores: &[f64], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() || scores.len() != truth.len() {
            return Err(Error::Dimension(
                "prediction, score and label counts differ".into(),
            ));
        }
        let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fneg += 1,
            }
        }
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(tp + tn, tp + tn + fp + fneg);
        let precision = ratio(tp, tp + fp);
        let tpr = ratio(tp, tp + fneg);
        let fpr = ratio(fp, fp + tn);
        let (mem, non): (Vec<_>, Vec<_>) = scores
            .iter()
            .copied()
            .zip(truth.iter().copied())
            .partition(|e| e.1);
        let m: Vec<f64> = mem.into_iter().map(|e| e.0).collect();
        let n: Vec<f64> = non.into_iter().map(|e| e.0).collect();
        let auc = auc(&m, &n).unwrap_or_else(|| {
            degenerate = true;
            0.0
        });
        Ok(Self {
            accuracy,
            precision,
            tpr,
            fpr,
            auc,
            advantage: advantage(tpr, fpr)?,
            degenerate,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.accuracy, self.precision, self.tpr, self.fpr, self.auc, self.advantage
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(m: &[f64], n: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in m {
            for b in n {
                s += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (m.len() * n.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.7, 0.1]), Some(1.0));
        assert_eq!(auc(&[0.3; 5], &[0.3; 4]), Some(0.5));
        assert_eq!(auc(&[], &[1.0]), None);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(1.0, 0.0).unwrap(), 1.0);
        assert!((advantage(0.92, 0.35).unwrap() - 0.57).abs() < 1e-12);
        assert!((advantage(0.88, 0.39).unwrap() - 0.49).abs() < 1e-12);
        assert!(advantage(1.2, 0.0).is_err());
    }

    #[test]
    fn perfect_separation_metrics() {
        let m = AttackMetrics::from_predictions(
            &[true, true, false],
            &[2.0, 1.5, 0.1],
            &[true, true, false],
        )
        .unwrap();
        assert_eq!(
            (m.accuracy, m.auc, m.fpr, m.tpr, m.precision),
            (1.0, 1.0, 0.0, 1.0, 1.0)
        );
        assert!(!m.degenerate);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m =
            AttackMetrics::from_predictions(&[false, false], &[0.0, 0.0], &[true, false]).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            m in prop::collection::vec(0u8..6, 1..12),
            n in prop::collection::vec(0u8..6, 1..12),
        ) {
            let m: Vec<f64> = m.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            prop_assert!((auc(&m, &n).unwrap() - brute_auc(&m, &n)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            m in prop::collection::vec(-5.0f64..5.0, 1..20),
            n in prop::collection::vec(-5.0f64..5.0, 1..20),
            a in 0.1f64..3.0,
            b in -2.0f64..2.0,
        ) {
            let f = |v: f64| (a * v + b).tanh() * 7.0 + (a * v).powi(3);
            let fm: Vec<f64> = m.iter().map(|&v| f(v)).collect();
            let fnn: Vec<f64> = n.iter().map(|&v| f(v)).collect();
            prop_assert_eq!(auc(&m, &n), auc(&fm, &fnn));
        }
    }
}
