use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Fact, FilterIndex};
use crate::encoder::PairIndex;
use crate::error::{Error, Result};
use crate::inference::{evaluate_lp, LpMetrics, PositionSet, Predictor};
use crate::model::{Model, ModelSpec};
use crate::numerics::checkpoint::{Checkpoint, Entry, Section};
use crate::numerics::{ParamTree, Tape, Tensor};
use crate::rng::substream;
use crate::training::loss::{batch_loss, training_queries};
use crate::training::optim::{clip_gradients, AdamW};
use crate::training::{lr_at, TrainConfig};

const MAX_REDRAWS: usize = 1000;
const VALIDATION_BATCH: usize = 512;

/// Observed and target halves of one epoch's structure split.
#[derive(Clone, Debug)]
pub struct Split {
    pub observed: Vec<Fact>,
    pub target: Vec<Fact>,
    /// Draws discarded because one side came out empty.
    pub redraws: usize,
}

/// Each fact goes to the observed side with probability `p_obs`; a draw leaving a side empty is redrawn.
pub fn split_structure<R: Rng + ?Sized>(facts: &[Fact], p_obs: f64, rng: &mut R) -> Result<Split> {
    if !(p_obs > 0.0 && p_obs < 1.0) {
        return Err(Error::Config(format!("p_obs {p_obs} outside (0, 1)")));
    }
    if facts.len() < 2 {
        return Err(Error::Config("structure split needs at least two facts".into()));
    }
    for redraws in 0..MAX_REDRAWS {
        let (mut observed, mut target) = (Vec::new(), Vec::new());
        for f in facts {
            if rng.random::<f64>() < p_obs {
                observed.push(f.clone());
            } else {
                target.push(f.clone());
            }
        }
        if !observed.is_empty() && !target.is_empty() {
            return Ok(Split {
                observed,
                target,
                redraws,
            });
        }
    }
    Err(Error::Numerical(format!("structure split left a side empty {MAX_REDRAWS} times")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-query loss over the epoch.
    pub loss: f64,
    pub lr: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    pub batches: usize,
    pub targets: usize,
    pub redraws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub mrr: f64,
}

/// Owns the model, optimiser moments and epoch counter of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    opt: AdamW<f32>,
    epoch: usize,
    best: Option<BestRecord>,
    best_params: Option<ParamTree<f32>>,
    train: Vec<Fact>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Trainer> {
        config.validate()?;
        let spec = ModelSpec {
            model: config.model.clone(),
            ablations: config.ablations,
            n_ent: data.vocab.entity_count(),
            n_rel: data.vocab.relation_count(),
        };
        let model = Model::new(&spec, config.seed)?;
        let mut seen = HashSet::new();
        let train: Vec<Fact> = data.train.iter().filter(|f| seen.insert(*f)).cloned().collect();
        if train.len() < 2 {
            return Err(Error::Config("training needs at least two distinct facts".into()));
        }
        Ok(Trainer {
            opt: AdamW::new(&model.params),
            config,
            model,
            epoch: 0,
            best: None,
            best_params: None,
            train,
        })
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best(&self) -> Option<BestRecord> {
        self.best
    }

    /// Parameters with the best validation MRR so far, or the current ones.
    pub fn best_model(&self) -> Model {
        Model {
            enc: self.model.enc.clone(),
            params: self.best_params.clone().unwrap_or_else(|| self.model.params.clone()),
        }
    }

    pub fn restore_best(&mut self, record: BestRecord, params: ParamTree<f32>) {
        self.best = Some(record);
        self.best_params = Some(params);
    }

    /// Observed and target facts of `epoch`.
    pub fn epoch_structure(&self, epoch: usize) -> Result<Split> {
        if self.config.ablations.no_struct_sampling {
            return Ok(Split {
                observed: self.train.clone(),
                target: self.train.clone(),
                redraws: 0,
            });
        }
        split_structure(&self.train, self.config.p_obs, &mut substream(self.config.seed, "train.split", epoch as u64))
    }

    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let cfg = &self.config;
        let e = self.epoch;
        let lr = lr_at(cfg, e);
        let mut split = self.epoch_structure(e)?;
        split.target.shuffle(&mut substream(cfg.seed, "train.shuffle", e as u64));
        let observed_set: HashSet<&Fact> = if cfg.ablations.no_struct_sampling {
            HashSet::new()
        } else {
            split.observed.iter().collect()
        };
        let graph = PairIndex::<f32>::from_facts(&split.observed);
        let mut mask_rng = substream(cfg.seed, "train.mask", e as u64);
        let mut drop_rng = substream(cfg.seed, "train.dropout", e as u64);
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0);
        for chunk in split.target.chunks(cfg.batch_size) {
            if let Some(f) = chunk.iter().find(|f| observed_set.contains(f)) {
                return Err(Error::Numerical(format!("target fact {f} is also observed")));
            }
            let batch = training_queries(chunk, cfg.ablations.lp_loss, &mut mask_rng)?;
            let mut tape = Tape::<f32>::new();
            let p = self.model.params.bind(&mut tape);
            let loss = batch_loss(&self.model.enc, &mut tape, &p, &graph, &batch, &mut drop_rng, true)?;
            let value = tape.value(loss).scalar() as f64;
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {e}")));
            }
            let mut grads = tape.backward(loss)?;
            let mut g = self.model.params.collect_grads(&p, &mut grads);
            norm_sum += clip_gradients(&mut g, cfg.clip_norm);
            self.opt
                .update(&mut self.model.params, &g, lr, cfg.weight_decay)
                .map_err(|err| Error::Numerical(format!("epoch {e}: {err}")))?;
            loss_sum += value * chunk.len() as f64;
            batches += 1;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: e,
            loss: loss_sum / split.target.len() as f64,
            lr,
            grad_norm: norm_sum / batches as f64,
            batches,
            targets: split.target.len(),
            redraws: split.redraws,
        })
    }

    /// Single-mask MRR over every position of the validation facts, encoding the training graph.
    /// Keeps the parameters when they beat the best record.
    pub fn validate(&mut self, data: &Dataset, filter: &FilterIndex) -> Result<LpMetrics> {
        if data.valid.is_empty() {
            return Err(Error::Config("validation split is empty".into()));
        }
        let pred = Predictor::new(&self.model, &self.train)?;
        let m = evaluate_lp(&pred, &data.valid, filter, PositionSet::All, VALIDATION_BATCH, 0)?.metrics;
        if self.best.is_none_or(|b| m.mrr > b.mrr) {
            self.best = Some(BestRecord {
                epoch: self.epoch,
                mrr: m.mrr,
            });
            self.best_params = Some(self.model.params.clone());
        }
        Ok(m)
    }

    /// Train to the configured epoch count, validating on schedule and after the last epoch.
    pub fn fit<F>(&mut self, data: &Dataset, filter: &FilterIndex, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer, &EpochStats, Option<&LpMetrics>) -> Result<()>,
    {
        while self.epoch < self.config.epochs {
            let stats = self.train_epoch()?;
            let iv = self.config.validation_interval;
            let due = (iv > 0 && self.epoch % iv == 0) || self.epoch == self.config.epochs;
            let metrics = if due && !data.valid.is_empty() {
                Some(self.validate(data, filter)?)
            } else {
                None
            };
            on_epoch(self, &stats, metrics.as_ref())?;
        }
        Ok(())
    }

    /// Parameters and optimiser moments at the current epoch.
    pub fn to_checkpoint(&self) -> Checkpoint<f32> {
        let mut entries = self.model.param_entries();
        for (section, moments) in [(Section::AdamFirst, &self.opt.first), (Section::AdamSecond, &self.opt.second)] {
            for (leaf, t) in self.model.params.leaves().iter().zip(moments) {
                entries.push(Entry {
                    name: leaf.name.clone(),
                    section,
                    decay_eligible: leaf.decay_eligible,
                    tensor: t.clone(),
                });
            }
        }
        Checkpoint {
            header: serde_json::json!({
                "spec": self.model.spec(),
                "train_config": self.config,
                "epoch": self.epoch,
                "adam_step": self.opt.step,
                "best": self.best,
            }),
            entries,
        }
    }

    /// Continue a run from [`Trainer::to_checkpoint`]; the best parameters are restored separately.
    pub fn resume(ckpt: &Checkpoint<f32>, data: &Dataset) -> Result<Trainer> {
        let field = |k: &str| {
            ckpt.header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header lacks {k}")))
        };
        let config: TrainConfig = serde_json::from_value(field("train_config")?)?;
        let mut t = Trainer::new(config, data)?;
        let spec: ModelSpec = serde_json::from_value(field("spec")?)?;
        if spec != t.model.spec() {
            return Err(Error::Checkpoint("model spec does not match config and dataset".into()));
        }
        t.model = Model::from_checkpoint(ckpt)?;
        t.epoch = serde_json::from_value(field("epoch")?)?;
        t.opt.step = serde_json::from_value(field("adam_step")?)?;
        t.best = serde_json::from_value(field("best")?)?;
        for (section, slot) in [(Section::AdamFirst, &mut t.opt.first), (Section::AdamSecond, &mut t.opt.second)] {
            let mut seen = 0;
            for e in ckpt.section(section) {
                let id = t
                    .model
                    .params
                    .id(&e.name)
                    .ok_or_else(|| Error::Checkpoint(format!("moment for unknown leaf {}", e.name)))?;
                if slot[id.0].shape() != e.tensor.shape() {
                    return Err(Error::Checkpoint(format!("moment shape mismatch for {}", e.name)));
                }
                slot[id.0] = e.tensor.clone();
                seen += 1;
            }
            if seen != slot.len() {
                return Err(Error::Checkpoint(format!("{seen} of {} optimiser moments present", slot.len())));
            }
        }
        Ok(t)
    }

    /// Deduplicated training facts in file order.
    pub fn train_facts(&self) -> &[Fact] {
        &self.train
    }

    pub fn optimizer(&self) -> &AdamW<f32> {
        &self.opt
    }

    pub fn moments_match_params(&self) -> bool {
        let shapes = |v: &[Tensor<f32>]| v.iter().map(|t| t.shape()).collect::<Vec<_>>();
        let p: Vec<_> = self.model.params.leaves().iter().map(|l| l.tensor.shape()).collect();
        shapes(&self.opt.first) == p && shapes(&self.opt.second) == p
    }
}
