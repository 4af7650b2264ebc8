use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};

use crate::error::{Error, Result};
use crate::mia::metrics::AttackMetrics;
use crate::mia::scores::{ModelId, ScoreRecord};

pub const LIRA_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Threshold,
    Logistic,
    Lira,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(AttackKind::Threshold),
            "logistic" => Ok(AttackKind::Logistic),
            "lira" => Ok(AttackKind::Lira),
            other => Err(Error::Config(format!("unknown attack kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Threshold => "threshold",
            AttackKind::Logistic => "logistic",
            AttackKind::Lira => "lira",
        })
    }
}

/// A fitted membership classifier over oriented scores (larger means more
/// member-like).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackModel {
    /// Member iff oriented score ≥ `tau`.
    Threshold { tau: f64 },
    /// Member iff `sigmoid(w·s + b) ≥ 1/2`.
    Logistic { w: f64, b: f64 },
    /// Member iff `ln N(s; μ_in, σ²_in) − ln N(s; μ_out, σ²_out) ≥ log_ratio_threshold`.
    Lira {
        mu_in: f64,
        var_in: f64,
        mu_out: f64,
        var_out: f64,
        log_ratio_threshold: f64,
    },
}

fn log_density(s: f64, mu: f64, var: f64) -> f64 {
    Normal::new(mu, var.sqrt()).map_or(f64::NEG_INFINITY, |n| n.ln_pdf(s))
}

impl AttackModel {
    /// Continuous decision value; its sign relative to the cut decides membership.
    pub fn decision(&self, oriented: f64) -> f64 {
        match *self {
            AttackModel::Threshold { tau } => oriented - tau,
            AttackModel::Logistic { w, b } => w * oriented + b,
            AttackModel::Lira {
                mu_in,
                var_in,
                mu_out,
                var_out,
                log_ratio_threshold,
            } => {
                log_density(oriented, mu_in, var_in)
                    - log_density(oriented, mu_out, var_out)
                    - log_ratio_threshold
            }
        }
    }

    pub fn predict(&self, oriented: f64) -> bool {
        self.decision(oriented) >= 0.0
    }
}

fn split_labels(scores: &[(f64, bool)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let members: Vec<f64> = scores.iter().filter(|e| e.1).map(|e| e.0).collect();
    let nonmembers: Vec<f64> = scores.iter().filter(|e| !e.1).map(|e| e.0).collect();
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidArgument(
            "attack fitting needs both members and nonmembers".into(),
        ));
    }
    Ok((members, nonmembers))
}

/// τ maximizing TPR − FPR for the rule `s ≥ τ`; ties go to the lowest τ.
pub fn fit_threshold(scores: &[(f64, bool)]) -> Result<f64> {
    let (members, nonmembers) = split_labels(scores)?;
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n1, n0) = (members.len() as f64, nonmembers.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (0.0, f64::INFINITY);
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == tau {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let adv = tp as f64 / n1 - fp as f64 / n0;
        // descending sweep: ">=" keeps the lowest τ among ties
        if adv >= best.0 {
            best = (adv, tau);
        }
    }
    Ok(best.1)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    (mu, var.max(LIRA_VARIANCE_FLOOR))
}

/// Gaussian fits to the member and nonmember populations.
pub fn fit_lira(scores: &[(f64, bool)]) -> Result<AttackModel> {
    let (members, nonmembers) = split_labels(scores)?;
    let (mu_in, var_in) = mean_var(&members);
    let (mu_out, var_out) = mean_var(&nonmembers);
    Ok(AttackModel::Lira {
        mu_in,
        var_in,
        mu_out,
        var_out,
        log_ratio_threshold: 0.0,
    })
}

/// One-feature logistic regression by Newton's method with a tiny ridge.
pub fn fit_logistic(scores: &[(f64, bool)]) -> Result<AttackModel> {
    split_labels(scores)?;
    let n = scores.len() as f64;
    let mean = scores.iter().map(|e| e.0).sum::<f64>() / n;
    let sd = (scores.iter().map(|e| (e.0 - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let ridge = 1e-6 * n;
    let (mut w, mut b) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (ridge * w, 0.0, ridge, 0.0, 0.0);
        for &(s, y) in scores {
            let z = (s - mean) / sd;
            let p = crate::nn::sigmoid(w * z + b);
            let r = p - if y { 1.0 } else { 0.0 };
            let h = p * (1.0 - p);
            gw += r * z;
            gb += r;
            hww += h * z * z;
            hwb += h * z;
            hbb += h;
        }
        let det = hww * hbb - hwb * hwb;
        if det.abs() < 1e-300 {
            break;
        }
        let dw = (hbb * gw - hwb * gb) / det;
        let db = (hww * gb - hwb * gw) / det;
        w -= dw;
        b -= db;
        if dw.abs().max(db.abs()) < 1e-12 {
            break;
        }
    }
    // undo the standardization
    Ok(AttackModel::Logistic {
        w: w / sd,
        b: b - w * mean / sd,
    })
}

fn labeled(records: &[ScoreRecord]) -> Vec<(f64, bool)> {
    records.iter().map(|r| (r.oriented(), r.member)).collect()
}

/// Fit an attack on shadow-model records; any target record is refused.
pub fn fit_attack(corpus: &[ScoreRecord], kind: AttackKind) -> Result<AttackModel> {
    if corpus.iter().any(|r| r.model == ModelId::Target) {
        return Err(Error::PrivacyViolation(
            "attack fitting was handed target-model records".into(),
        ));
    }
    let scores = labeled(corpus);
    match kind {
        AttackKind::Threshold => Ok(AttackModel::Threshold {
            tau: fit_threshold(&scores)?,
        }),
        AttackKind::Logistic => fit_logistic(&scores),
        AttackKind::Lira => fit_lira(&scores),
    }
}

/// Metrics of `attack` on target-model records.
pub fn evaluate(attack: &AttackModel, records: &[ScoreRecord]) -> Result<AttackMetrics> {
    if records.iter().any(|r| r.model != ModelId::Target) {
        return Err(Error::InvalidArgument(
            "evaluation expects target-model records only".into(),
        ));
    }
    evaluate_scores(attack, &labeled(records))
}

/// Metrics of `attack` on raw `(oriented score, is_member)` pairs.
pub fn evaluate_scores(attack: &AttackModel, scores: &[(f64, bool)]) -> Result<AttackMetrics> {
    let decisions: Vec<f64> = scores.iter().map(|e| attack.decision(e.0)).collect();
    let predicted: Vec<bool> = decisions.iter().map(|&d| d >= 0.0).collect();
    let truth: Vec<bool> = scores.iter().map(|e| e.1).collect();
    AttackMetrics::from_predictions(&predicted, &decisions, &truth)
}
