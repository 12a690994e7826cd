//! Finite-difference check of the full encoder, decoder and loss composite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Ablations, ModelConfig};
use crate::data::{mask_fact, Fact, Purpose};
use crate::encoder::{EncoderParams, PairIndex};
use crate::error::{Error, Result};
use crate::numerics::gradcheck::random_tensor;
use crate::numerics::{finite_diff_check, ParamTree};
use crate::rng::substream;
use crate::training::{batch_loss, BatchQueries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub n_ent: usize,
    pub n_rel: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Number of observed facts in the toy graph.
    pub observed: usize,
    /// Masks in the single query.
    pub masks: usize,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n_ent: 5,
            n_rel: 3,
            d: 8,
            layers: 2,
            heads: 2,
            eps: 1e-5,
            tolerance: 1e-4,
            observed: 3,
            masks: 2,
            seed: 4,
            ablations: Ablations::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub scalars: usize,
    pub passed: bool,
}

fn random_fact<R: Rng + ?Sized>(n_ent: usize, n_rel: usize, qualifiers: usize, rng: &mut R) -> Fact {
    let e = |rng: &mut R| rng.random_range(0..n_ent as u32);
    let r = |rng: &mut R| rng.random_range(0..n_rel as u32);
    let mut f = Fact::triple(e(rng), r(rng), e(rng));
    for _ in 0..qualifiers {
        f = f.with_qualifier(r(rng), e(rng));
    }
    f
}

/// Perturbs every parameter scalar of a dropout-free model in 64-bit and
/// compares the AO-AR loss's analytic gradient with central differences.
pub fn composite_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.n_ent < 2 || cfg.n_rel < 1 || cfg.masks == 0 || cfg.masks > 5 {
        return Err(Error::Config("gradcheck needs n_ent >= 2, n_rel >= 1 and 1..=5 masks".into()));
    }
    let model = ModelConfig {
        d: cfg.d,
        layers: cfg.layers,
        heads_ent: cfg.heads,
        heads_rel: cfg.heads,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    model.validate()?;
    let mut rng = substream(cfg.seed, "gradcheck", 0);
    let mut tree = ParamTree::<f64>::new();
    let enc = EncoderParams::new(&model, &cfg.ablations, cfg.n_ent, cfg.n_rel, &mut tree, &mut rng)?;
    // Unit-scale parameters keep every nonlinearity away from its flat regions.
    for leaf in tree.leaves_mut() {
        leaf.tensor = random_tensor(leaf.tensor.rows(), leaf.tensor.cols(), 0.5, &mut rng);
    }
    let observed: Vec<Fact> = (0..cfg.observed)
        .map(|i| random_fact(cfg.n_ent, cfg.n_rel, i % 2, &mut rng))
        .collect();
    let graph = PairIndex::<f64>::from_facts(&observed);
    let target = random_fact(cfg.n_ent, cfg.n_rel, 1, &mut rng);
    let mut positions: Vec<usize> = rand::seq::index::sample(&mut rng, target.len(), cfg.masks).into_vec();
    positions.sort_unstable();
    let (q, g) = mask_fact(&target, &positions, Purpose::Training)?;
    let batch = BatchQueries {
        queries: vec![q],
        golds: vec![g],
    };
    let max_rel_error = finite_diff_check(
        |tape, _, p| batch_loss(&enc, tape, p, &graph, &batch, &mut substream(0, "gradcheck.dropout", 0), false),
        &tree,
        cfg.eps,
    )?;
    Ok(GradcheckReport {
        max_rel_error,
        scalars: tree.scalar_count(),
        passed: max_rel_error < cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_composite_passes() {
        let r = composite_gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn rejects_bad_mask_count() {
        let cfg = GradcheckConfig { masks: 0, ..GradcheckConfig::default() };
        assert!(composite_gradcheck(&cfg).is_err());
    }
}
