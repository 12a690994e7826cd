//! Hyper-relational facts, vocabularies, masking and dataset handling.

mod fact;
mod filter;
pub mod io;
mod mask;
pub mod synth;
mod vocab;

use std::collections::HashSet;

pub use fact::{Component, EntityId, Fact, Kind, RelationId, Role};
pub use filter::{BlankKey, FilterIndex};
pub use mask::{mask_fact, sample_mask_pattern, Gold, MaskedQuery, Purpose, Slot, SlotRole, SlotState};
pub use synth::{generate_synthetic_hkg, RuleOracle, SynthConfig};
pub use vocab::Vocab;

use crate::error::{Error, Result};

/// Train/valid/test splits over one vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<Fact>,
    pub valid: Vec<Fact>,
    pub test: Vec<Fact>,
}

impl Dataset {
    /// Validates bounds and split disjointness.
    pub fn new(vocab: Vocab, train: Vec<Fact>, valid: Vec<Fact>, test: Vec<Fact>) -> Result<Dataset> {
        for fact in train.iter().chain(&valid).chain(&test) {
            vocab.check_fact(fact)?;
        }
        let train_set: HashSet<&Fact> = train.iter().collect();
        let valid_set: HashSet<&Fact> = valid.iter().collect();
        if let Some(f) = valid.iter().find(|f| train_set.contains(f)) {
            return Err(Error::Config(format!("fact {f} appears in train and valid")));
        }
        if let Some(f) = test
            .iter()
            .find(|f| train_set.contains(f) || valid_set.contains(f))
        {
            return Err(Error::Config(format!("test fact {f} also appears in another split")));
        }
        Ok(Dataset {
            vocab,
            train,
            valid,
            test,
        })
    }

    pub fn all_facts(&self) -> impl Iterator<Item = &Fact> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn train_set(&self) -> HashSet<Fact> {
        self.train.iter().cloned().collect()
    }

    /// Fact counts per length, `3 + 2n -> count`, over the training split.
    pub fn train_length_counts(&self) -> Vec<(usize, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for f in &self.train {
            *counts.entry(f.len()).or_insert(0usize) += 1;
        }
        counts.into_iter().collect()
    }

    /// Merge validation into training, used for final retraining runs.
    pub fn merged_train_valid(&self) -> Dataset {
        let mut train = self.train.clone();
        train.extend(self.valid.iter().cloned());
        Dataset {
            vocab: self.vocab.clone(),
            train,
            valid: Vec::new(),
            test: self.test.clone(),
        }
    }
}
