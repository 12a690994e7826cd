use hkgdiff::data::{mask_fact, Fact, Kind, MaskedQuery, Purpose, SlotState};
use hkgdiff::inference::{generate_fact, GenerationConfig, Predictor, Temperatures};
use hkgdiff::model::{Model, ModelSpec};
use hkgdiff::rng::substream;
use hkgdiff::{Ablations, ModelConfig};
use proptest::prelude::*;

const N_ENT: u32 = 7;
const N_REL: u32 = 3;

fn toy() -> (Model, Vec<Fact>) {
    let spec = ModelSpec {
        model: ModelConfig {
            d: 8,
            layers: 1,
            heads_ent: 2,
            heads_rel: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        ablations: Ablations::default(),
        n_ent: N_ENT as usize,
        n_rel: N_REL as usize,
    };
    let graph = vec![
        Fact::triple(0, 0, 1),
        Fact::triple(1, 1, 2).with_qualifier(2, 3),
        Fact::triple(4, 2, 5),
        Fact::triple(6, 0, 0).with_qualifier(1, 2).with_qualifier(0, 4),
    ];
    (Model::new(&spec, 11).unwrap(), graph)
}

fn fact_strategy() -> impl Strategy<Value = Fact> {
    (0..N_ENT, 0..N_REL, 0..N_ENT, prop::collection::vec((0..N_REL, 0..N_ENT), 0..3)).prop_map(|(h, r, t, q)| {
        q.into_iter().fold(Fact::triple(h, r, t), |f, (k, v)| f.with_qualifier(k, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generation_fills_exactly_the_masked_slots(fact in fact_strategy(), bits in 1u32..128, seed in 0u64..1000) {
        let (model, graph) = toy();
        let pred = Predictor::new(&model, &graph).unwrap();
        let pattern: Vec<usize> = (0..fact.len()).filter(|&p| bits >> p & 1 == 1).collect();
        prop_assume!(!pattern.is_empty());
        let (query, _) = mask_fact(&fact, &pattern, Purpose::Inference).unwrap();
        let cfg = GenerationConfig { steps: 20, ..GenerationConfig::default() };
        let g = generate_fact(&pred, &query, &cfg, &mut substream(seed, "gen", 0)).unwrap();
        prop_assert_eq!(g.fact.len(), fact.len());
        for (p, state) in query.states().iter().enumerate() {
            if let SlotState::Known(v) = state {
                prop_assert_eq!(g.fact.component(p).raw(), *v);
            }
        }
        let mut filled: Vec<usize> = g.choices.iter().map(|c| c.position).collect();
        filled.sort_unstable();
        prop_assert_eq!(filled, pattern);
        prop_assert!(g.recomputations <= query.mask_count());
        prop_assert!(g.choices.iter().all(|c| c.prob > 0.0 && c.prob <= 1.0));
    }

    #[test]
    fn slot_distributions_are_normalised_and_typed(n in 0usize..3, tau in 0.2f64..3.0) {
        let (model, graph) = toy();
        let pred = Predictor::new(&model, &graph).unwrap();
        let q = MaskedQuery::fully_masked(n);
        let dists = pred.distributions(&[q], Temperatures { ent: tau, rel: tau }).unwrap();
        prop_assert_eq!(dists[0].len(), 3 + 2 * n);
        for (p, m) in dists[0].iter().enumerate() {
            let expected = if Kind::at_position(p) == Kind::Entity { N_ENT } else { N_REL };
            prop_assert_eq!(m.dist.probs.len(), expected as usize);
            prop_assert!((m.dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
