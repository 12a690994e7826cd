//! Shared fixtures for the benchmarks.

use hkgdiff::data::{generate_synthetic_hkg, Dataset, SynthConfig};
use hkgdiff::model::{Model, ModelSpec};
use hkgdiff::{Ablations, ModelConfig};

/// Default synthetic dataset with an untrained default-size model.
pub fn fixture() -> (Dataset, Model) {
    let (data, _) = generate_synthetic_hkg(&SynthConfig::default()).expect("default config is feasible");
    let spec = ModelSpec {
        model: ModelConfig::default(),
        ablations: Ablations::default(),
        n_ent: data.vocab.entity_count(),
        n_rel: data.vocab.relation_count(),
    };
    let model = Model::new(&spec, 0).expect("default spec is valid");
    (data, model)
}
