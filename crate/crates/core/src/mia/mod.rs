//! Shadow-model membership inference: splits, score extraction, attack
//! fitting and evaluation metrics.

mod attack;
mod metrics;
mod scores;
mod shadow;
mod splits;

pub use attack::{
    evaluate, evaluate_scores, fit_attack, fit_lira, fit_logistic, fit_threshold, AttackKind,
    AttackModel, LIRA_VARIANCE_FLOOR,
};
pub use metrics::{advantage, auc, AttackMetrics, METRICS_CSV_HEADER};
pub use scores::{
    diffusion_probes, extract_score_diffusion, extract_score_gan, read_scores, write_scores,
    ModelId, ScoreKind, ScoreRecord,
};
pub use shadow::{
    score_split, train_and_score, train_shadows, DiffusionTrainer, GanTrainer, Trainer,
};
pub use splits::{make_splits, MemberSplit, SplitFractions, SplitPlan};

/// Number of fixed diffusion probes per attack.
pub const DIFFUSION_PROBES: usize = 16;
