//! A trained encoder: parameter layout plus its tensors, with checkpoint I/O.

use serde::{Deserialize, Serialize};

use crate::config::{Ablations, ModelConfig};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{Checkpoint, Entry, Section};
use crate::numerics::ParamTree;
use crate::rng::substream;

/// Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub ablations: Ablations,
    pub n_ent: usize,
    pub n_rel: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub enc: EncoderParams,
    pub params: ParamTree<f32>,
}

impl Model {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Model> {
        let mut params = ParamTree::new();
        let mut rng = substream(seed, "model.init", 0);
        let enc = EncoderParams::new(&spec.model, &spec.ablations, spec.n_ent, spec.n_rel, &mut params, &mut rng)?;
        Ok(Model { enc, params })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            model: self.enc.config.clone(),
            ablations: self.enc.ablations,
            n_ent: self.enc.n_ent,
            n_rel: self.enc.n_rel,
        }
    }

    pub fn cosine(&self) -> bool {
        self.enc.ablations.cosine_sim
    }

    /// Parameter entries in tree order.
    pub fn param_entries(&self) -> Vec<Entry<f32>> {
        self.params
            .leaves()
            .iter()
            .map(|l| Entry {
                name: l.name.clone(),
                section: Section::Param,
                decay_eligible: l.decay_eligible,
                tensor: l.tensor.clone(),
            })
            .collect()
    }

    /// Rebuild from a checkpoint whose header carries a `spec` object.
    pub fn from_checkpoint(ckpt: &Checkpoint<f32>) -> Result<Model> {
        let spec: ModelSpec = serde_json::from_value(
            ckpt.header
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("header has no model spec".into()))?,
        )?;
        let mut model = Model::new(&spec, 0)?;
        let mut seen = 0;
        for e in ckpt.section(Section::Param) {
            let id = model
                .params
                .id(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", e.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != e.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, layout expects {:?}",
                    e.name,
                    e.tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = e.tensor.clone();
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} parameters",
                model.params.len()
            )));
        }
        Ok(model)
    }

    /// Checkpoint with only parameters and the spec header.
    pub fn to_checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint {
            header: serde_json::json!({ "spec": self.spec() }),
            entries: self.param_entries(),
        }
    }
}
