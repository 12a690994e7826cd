//! Model architecture and ablation settings shared by training and inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::WeightInit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Representation width.
    pub d: usize,
    /// Number of message-passing layers.
    pub layers: usize,
    pub heads_ent: usize,
    pub heads_rel: usize,
    /// Hidden width of the post-attention MLP as a multiple of `d`.
    pub ffn_mult: usize,
    pub dropout: f64,
    /// Mask tokens share the layer-0 entity/relation tokens.
    pub tied_tokens: bool,
    /// Weight decay also covers the layer norm in front of each post-attention MLP.
    pub decay_pre_mlp_ln: bool,
    /// Fixed std for projection weights; unset means `1/sqrt(fan_in)`.
    pub weight_std: Option<f64>,
    /// Std of the layer-0 and mask tokens.
    pub token_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            layers: 4,
            heads_ent: 4,
            heads_rel: 4,
            ffn_mult: 2,
            dropout: 0.1,
            tied_tokens: false,
            decay_pre_mlp_ln: false,
            weight_std: None,
            token_std: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn weight_init(&self) -> WeightInit {
        self.weight_std.map_or(WeightInit::FanIn, WeightInit::Fixed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("d, layers and ffn_mult must be positive".into()));
        }
        for (name, h) in [("heads_ent", self.heads_ent), ("heads_rel", self.heads_rel)] {
            if h == 0 || self.d % h != 0 {
                return Err(Error::Config(format!("{name} = {h} must divide d = {}", self.d)));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.token_std > 0.0) || self.weight_std.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("initialisation stds must be positive".into()));
        }
        Ok(())
    }
}

/// Switches that each disable one component of the method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Messages use the whole fact representation instead of excluding the receiving pair.
    pub no_context_msg: bool,
    /// Observed set is the full training set every epoch.
    pub no_struct_sampling: bool,
    /// Unweighted mean of incoming messages replaces attention.
    pub mean_pool_attention: bool,
    /// One learnable layer-0 vector per entity and relation.
    pub individual_init: bool,
    /// Exactly one masked component per training query.
    pub lp_loss: bool,
    /// Cosine similarity replaces the scaled dot product in the decoder.
    pub cosine_sim: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 6] = [
        "no_context_msg",
        "no_struct_sampling",
        "mean_pool_attention",
        "individual_init",
        "lp_loss",
        "cosine_sim",
    ];

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [
            self.no_context_msg,
            self.no_struct_sampling,
            self.mean_pool_attention,
            self.individual_init,
            self.lp_loss,
            self.cosine_sim,
        ];
        Self::NAMES.iter().zip(flags).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "no_context_msg" => &mut self.no_context_msg,
            "no_struct_sampling" => &mut self.no_struct_sampling,
            "mean_pool_attention" => &mut self.mean_pool_attention,
            "individual_init" => &mut self.individual_init,
            "lp_loss" => &mut self.lp_loss,
            "cosine_sim" => &mut self.cosine_sim,
            _ => return Err(Error::Config(format!("unknown ablation {name}"))),
        };
        *slot = on;
        Ok(())
    }
}
