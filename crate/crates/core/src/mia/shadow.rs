use rayon::prelude::*;

use crate::data::Dataset;
use crate::dp::DpSgdConfig;
use crate::error::Result;
use crate::mia::scores::{
    extract_score_diffusion, extract_score_gan, ModelId, ScoreKind, ScoreRecord,
};
use crate::mia::splits::{MemberSplit, SplitPlan};
use crate::models::{
    diffusion_train, gan_train, DiffusionConfig, DiffusionModel, GanConfig, GanModel, NoiseDraw,
};
use crate::rng::RngPlan;

/// Something that trains a model on a member set and scores examples.
pub trait Trainer: Sync {
    type Model;

    fn kind(&self) -> ScoreKind;

    fn train(&self, members: &Dataset, plan: &RngPlan) -> Result<Self::Model>;

    fn score(&self, model: &Self::Model, x: &[f64], label: usize) -> Result<f64>;
}

pub struct GanTrainer {
    pub dp: DpSgdConfig,
    pub model: GanConfig,
}

impl Trainer for GanTrainer {
    type Model = GanModel;

    fn kind(&self) -> ScoreKind {
        ScoreKind::GanLogit
    }

    fn train(&self, members: &Dataset, plan: &RngPlan) -> Result<GanModel> {
        Ok(gan_train(members, &self.dp, &self.model, plan)?.model)
    }

    fn score(&self, model: &GanModel, x: &[f64], label: usize) -> Result<f64> {
        extract_score_gan(model, x, label)
    }
}

pub struct DiffusionTrainer {
    pub dp: DpSgdConfig,
    pub model: DiffusionConfig,
    /// Shared by every model scored within one attack.
    pub probes: Vec<NoiseDraw>,
}

impl Trainer for DiffusionTrainer {
    type Model = DiffusionModel;

    fn kind(&self) -> ScoreKind {
        ScoreKind::DiffusionLoss
    }

    fn train(&self, members: &Dataset, plan: &RngPlan) -> Result<DiffusionModel> {
        Ok(diffusion_train(members, &self.dp, &self.model, plan)?.0)
    }

    fn score(&self, model: &DiffusionModel, x: &[f64], label: usize) -> Result<f64> {
        extract_score_diffusion(model, x, label, &self.probes)
    }
}

/// Score every member and nonmember of `split` under `model`.
pub fn score_split<T: Trainer>(
    trainer: &T,
    model: &T::Model,
    data: &Dataset,
    split: &MemberSplit,
    id: ModelId,
) -> Result<Vec<ScoreRecord>> {
    let tagged = split
        .members
        .iter()
        .map(|&i| (i, true))
        .chain(split.nonmembers.iter().map(|&i| (i, false)));
    tagged
        .map(|(i, member)| {
            Ok(ScoreRecord {
                sample_id: i,
                model: id,
                kind: trainer.kind(),
                score: trainer.score(model, data.x(i), data.y(i))?,
                member,
            })
        })
        .collect()
}

/// Train one model on `split.members` and score its split.
pub fn train_and_score<T: Trainer>(
    trainer: &T,
    data: &Dataset,
    split: &MemberSplit,
    id: ModelId,
    plan: &RngPlan,
) -> Result<(T::Model, Vec<ScoreRecord>)> {
    let members = data.subset(&split.members)?;
    let model = trainer.train(&members, plan)?;
    let records = score_split(trainer, &model, data, split, id)?;
    Ok((model, records))
}

/// Train the `S` shadow models of `splits` and return their score corpus,
/// ordered by shadow. Shadow `k` trains under `plan.child(k + 1)`, so the
/// corpus does not depend on how the shadows are scheduled across threads.
pub fn train_shadows<T: Trainer>(
    trainer: &T,
    data: &Dataset,
    splits: &SplitPlan,
    plan: &RngPlan,
) -> Result<Vec<ScoreRecord>> {
    let per_shadow = splits
        .shadows
        .par_iter()
        .enumerate()
        .map(|(k, split)| {
            train_and_score(
                trainer,
                data,
                split,
                ModelId::Shadow(k),
                &plan.child(k as u64 + 1),
            )
            .map(|(_, r)| r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_shadow.into_iter().flatten().collect())
}
