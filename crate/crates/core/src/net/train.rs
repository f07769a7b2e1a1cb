use std::borrow::Cow;
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::checkpoint::{Checkpoint, TrainingMeta};
use super::model::{BackboneConfig, Model};
use super::norm::normalize_fit;
use crate::augment::{self, LabelMode, LabeledInput, Mask};
use crate::error::{Error, Result};
use crate::frontend::ModelInput;
use crate::prob::{Family, ScoreDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    #[default]
    None,
    Cutmix,
    Mixup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_fold: usize,
    pub folds: usize,
    pub loss_family: Family,
    pub augmentation: Augmentation,
    pub alpha: f64,
    pub label_mode: LabelMode,
    /// Add the L/R-swapped twin of every training item.
    pub swap_channels: bool,
    pub seed: u64,
    pub record_provenance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs_per_fold: 10,
            folds: 5,
            loss_family: Family::Logistic,
            augmentation: Augmentation::None,
            alpha: 0.7,
            label_mode: LabelMode::PerListener,
            swap_channels: true,
            seed: 0,
            record_provenance: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.augmentation != Augmentation::None && !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

/// One reference/coded pair with every listener score it received.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub excerpt_id: String,
    pub condition_id: String,
    pub input: ModelInput,
    pub scores: Vec<f64>,
}

impl Sample {
    pub fn item_id(&self) -> String {
        item_id(&self.excerpt_id, &self.condition_id)
    }

    /// The channel-swapped twin; labels are kept.
    pub fn swapped(&self) -> Sample {
        let mut input = self.input.channel_swapped();
        input.excerpt_id = format!("{}#swap", self.input.excerpt_id);
        Sample {
            excerpt_id: self.excerpt_id.clone(),
            condition_id: self.condition_id.clone(),
            input,
            scores: self.scores.clone(),
        }
    }
}

pub fn item_id(excerpt: &str, condition: &str) -> String {
    format!("{excerpt}/{condition}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub validation_excerpts: Vec<String>,
}

/// Partitions sample indices into `k` folds by excerpt, so every rating and
/// every augmented twin of an excerpt lands in the same fold.
pub fn kfold_split<S: AsRef<str>>(excerpt_ids: &[S], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut unique: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for id in excerpt_ids {
        let id = id.as_ref();
        if !seen.contains_key(id) {
            seen.insert(id, unique.len());
            unique.push(id);
        }
    }
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if unique.len() < k {
        return Err(Error::invalid(format!(
            "{} excerpts cannot fill {k} folds",
            unique.len()
        )));
    }
    let mut order: Vec<usize> = (0..unique.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; unique.len()];
    for (pos, &u) in order.iter().enumerate() {
        fold_of[u] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (mut train, mut validation) = (Vec::new(), Vec::new());
            for (i, id) in excerpt_ids.iter().enumerate() {
                if fold_of[seen[id.as_ref()]] == f {
                    validation.push(i);
                } else {
                    train.push(i);
                }
            }
            let validation_excerpts = order
                .iter()
                .filter(|&&u| fold_of[u] == f)
                .map(|&u| unique[u].to_string())
                .collect();
            Fold {
                index: f,
                train,
                validation,
                validation_excerpts,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// Per-sample mean NLL in nats for one fold/epoch/split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub fold: usize,
    pub epoch: usize,
    pub split: Split,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub fold: usize,
    pub epoch: usize,
    pub batch: usize,
    pub id_a: String,
    pub id_b: String,
    pub lambda_raw: f64,
    pub lambda_eff: f64,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub checkpoint: Checkpoint,
    pub curves: Vec<LossRecord>,
    pub provenance: Vec<ProvenanceRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub curves: Vec<LossRecord>,
    pub provenance: Vec<ProvenanceRecord>,
}

/// Mean NLL per listener score over `samples`.
pub fn mean_nll<'a>(model: &Model, samples: impl IntoIterator<Item = &'a Sample>) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for s in samples {
        total += model.loss(&s.input, &s.scores)?;
        n += s.scores.len();
    }
    if n == 0 {
        return Err(Error::invalid("no scores to evaluate"));
    }
    Ok(total / n as f64)
}

/// k-fold cross-validated training; one checkpoint per fold.
pub fn train(dataset: &[Sample], backbone: &BackboneConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ids: Vec<&str> = dataset.iter().map(|s| s.excerpt_id.as_str()).collect();
    let folds = kfold_split(&ids, cfg.folds, cfg.seed)?;
    let mut out = TrainOutcome {
        checkpoints: Vec::with_capacity(folds.len()),
        curves: Vec::new(),
        provenance: Vec::new(),
    };
    for fold in &folds {
        let f = train_fold(dataset, fold, backbone, cfg)?;
        out.checkpoints.push(f.checkpoint);
        out.curves.extend(f.curves);
        out.provenance.extend(f.provenance);
    }
    Ok(out)
}

pub fn train_fold(
    dataset: &[Sample],
    fold: &Fold,
    backbone: &BackboneConfig,
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    let mut train_set: Vec<Cow<Sample>> = fold.train.iter().map(|&i| Cow::Borrowed(&dataset[i])).collect();
    if cfg.swap_channels {
        let twins: Vec<Cow<Sample>> = fold.train.iter().map(|&i| Cow::Owned(dataset[i].swapped())).collect();
        train_set.extend(twins);
    }
    let validation: Vec<&Sample> = fold.validation.iter().map(|&i| &dataset[i]).collect();
    if train_set.is_empty() {
        return Err(Error::invalid("fold has no training samples"));
    }

    let norm = normalize_fit(
        train_set.iter().map(|s| &s.input),
        train_set.iter().flat_map(|s| s.scores.iter().copied()),
    )?;
    let mut model = Model::new(backbone.clone(), norm, cfg.loss_family)?;
    let mut adam = AdamState::new(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(fold.index as u64);

    let mut curves = Vec::with_capacity(2 * (cfg.epochs_per_fold + 1));
    let mut provenance = Vec::new();
    let record = |curves: &mut Vec<LossRecord>, epoch, split, nll| {
        curves.push(LossRecord {
            fold: fold.index,
            epoch,
            split,
            nll,
        })
    };
    record(&mut curves, 0, Split::Train, mean_nll(&model, train_set.iter().map(|s| s.as_ref()))?);
    if !validation.is_empty() {
        record(&mut curves, 0, Split::Validation, mean_nll(&model, validation.iter().copied())?);
    }

    let mut grad = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs_per_fold {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_n) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<LabeledInput> = chunk
                .iter()
                .map(|&i| LabeledInput {
                    input: &train_set[i].input,
                    scores: &train_set[i].scores,
                })
                .collect();
            let mixed = match cfg.augmentation {
                Augmentation::Cutmix if batch.len() >= 2 => {
                    Some(augment::cutmix(&batch, cfg.alpha, cfg.label_mode, &mut rng)?)
                }
                Augmentation::Mixup if batch.len() >= 2 => {
                    Some(augment::mixup(&batch, cfg.alpha, cfg.label_mode, &mut rng)?)
                }
                _ => None,
            };
            if cfg.record_provenance {
                for m in mixed.iter().flatten() {
                    provenance.push(ProvenanceRecord {
                        fold: fold.index,
                        epoch,
                        batch: b,
                        id_a: m.provenance.id_a.clone(),
                        id_b: m.provenance.id_b.clone(),
                        lambda_raw: m.provenance.spec.lambda_raw,
                        lambda_eff: m.provenance.spec.lambda_eff,
                        mask: m.provenance.spec.mask,
                    });
                }
            }
            let items: Vec<(&ModelInput, &[f64])> = match &mixed {
                Some(m) => m.iter().map(|x| (&x.input, x.labels.as_slice())).collect(),
                None => batch.iter().map(|x| (x.input, x.scores)).collect(),
            };

            grad.fill(0.0);
            let (mut loss, mut n) = (0.0, 0usize);
            for (input, labels) in items {
                loss += model.accumulate_grad(input, labels, 1.0, &mut grad)?;
                n += labels.len();
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "fold {} epoch {epoch} batch {b}: loss is {loss}",
                    fold.index
                )));
            }
            let inv = 1.0 / n as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam_step(&mut model.params.values, &grad, &mut adam, cfg.learning_rate)?;
            if model.params.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "fold {} epoch {epoch} batch {b}: parameters left the finite range",
                    fold.index
                )));
            }
            epoch_loss += loss;
            epoch_n += n;
        }
        record(&mut curves, epoch, Split::Train, epoch_loss / epoch_n as f64);
        if !validation.is_empty() {
            record(&mut curves, epoch, Split::Validation, mean_nll(&model, validation.iter().copied())?);
        }
    }

    let checkpoint = Checkpoint {
        config: model.config.clone(),
        params: model.params.clone(),
        norm: model.norm.clone(),
        meta: TrainingMeta {
            family: cfg.loss_family,
            fold: fold.index,
            epoch: cfg.epochs_per_fold,
            loss_history: curves.clone(),
            validation_excerpts: fold.validation_excerpts.clone(),
            train_config: cfg.clone(),
        },
        optimizer: adam,
    };
    Ok(FoldOutcome {
        checkpoint,
        curves,
        provenance,
    })
}

pub fn predict(checkpoint: &Checkpoint, input: &ModelInput) -> Result<ScoreDistribution> {
    checkpoint.model().forward(input)
}

/// Mean location and root-mean-square scale over fold predictions.
pub fn ensemble(dists: &[ScoreDistribution]) -> Result<ScoreDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::invalid("cannot ensemble zero predictions"))?;
    if dists.iter().any(|d| d.family != first.family) {
        return Err(Error::invalid("cannot ensemble predictions of different families"));
    }
    let n = dists.len() as f64;
    let mu = dists.iter().map(|d| d.mu).sum::<f64>() / n;
    let ms = dists.iter().map(|d| d.scale() * d.scale()).sum::<f64>() / n;
    ScoreDistribution::new(first.family, mu, 0.5 * ms.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn folds_partition_excerpts() {
        let ids: Vec<String> = (0..23)
            .flat_map(|e| (0..3).map(move |_| format!("e{e}")))
            .collect();
        let folds = kfold_split(&ids, 5, 11).unwrap();
        let mut seen = HashSet::new();
        for f in &folds {
            let size = f.validation_excerpts.len();
            assert!((4..=5).contains(&size));
            for &i in &f.validation {
                assert!(seen.insert(i));
            }
            let val: HashSet<&str> = f.validation.iter().map(|&i| ids[i].as_str()).collect();
            assert!(f.train.iter().all(|&i| !val.contains(ids[i].as_str())));
        }
        assert_eq!(seen.len(), ids.len());
        assert_eq!(kfold_split(&ids, 5, 11).unwrap(), folds);
        assert!(kfold_split(&ids[..6], 5, 0).is_err());
    }

    #[test]
    fn ensemble_is_mean_and_rms() {
        let a = ScoreDistribution::new(Family::Logistic, 40.0, 2f64.ln()).unwrap();
        let b = ScoreDistribution::new(Family::Logistic, 60.0, 4f64.ln()).unwrap();
        let e = ensemble(&[a, b]).unwrap();
        assert_eq!(e.mu, 50.0);
        assert!((e.scale() - 10f64.sqrt()).abs() < 1e-12);
        let g = ScoreDistribution::new(Family::Gaussian, 1.0, 0.0).unwrap();
        assert!(ensemble(&[a, g]).is_err());
        assert!(ensemble(&[]).is_err());
    }
}
