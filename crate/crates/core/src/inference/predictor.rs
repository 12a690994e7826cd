use std::cell::Cell;

use crate::data::{Fact, Kind, MaskedQuery};
use crate::decoder::{cached_candidates, score_candidates, ProbDist};
use crate::encoder::{GraphCache, PairIndex, QueryLayout};
use crate::error::Result;
use crate::model::Model;
use crate::numerics::{Tape, Tensor};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperatures {
    pub ent: f64,
    pub rel: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures { ent: 1.0, rel: 1.0 }
    }
}

impl Temperatures {
    pub fn get(&self, kind: Kind) -> f64 {
        match kind {
            Kind::Entity => self.ent,
            Kind::Relation => self.rel,
        }
    }
}

/// Distribution of one masked position.
#[derive(Clone, Debug)]
pub struct MaskDist {
    pub position: usize,
    pub dist: ProbDist,
}

/// A model with its graph pass over the observed facts computed once.
/// Candidate tables never depend on queries, so only the query pass runs per call.
pub struct Predictor<'m> {
    model: &'m Model,
    cache: GraphCache<f32>,
    calls: Cell<usize>,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m Model, observed: &[Fact]) -> Result<Predictor<'m>> {
        let mut tape = Tape::<f32>::new();
        let p = model.params.bind_frozen(&mut tape);
        let idx = PairIndex::from_facts(observed);
        let mut rng = substream(0, "inference.dropout", 0);
        let graph = model.enc.encode_graph(&mut tape, &p, &idx, &mut rng, false)?;
        Ok(Predictor::from_cache(model, graph.freeze(&tape)))
    }

    pub fn from_cache(model: &'m Model, cache: GraphCache<f32>) -> Predictor<'m> {
        Predictor {
            model,
            cache,
            calls: Cell::new(0),
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn cache(&self) -> &GraphCache<f32> {
        &self.cache
    }

    pub fn candidates(&self, kind: Kind) -> &Tensor<f32> {
        cached_candidates(kind, &self.cache)
    }

    /// Number of query passes run so far.
    pub fn encoder_calls(&self) -> usize {
        self.calls.get()
    }

    /// One query pass over a batch: layout plus entity-mask and relation-mask rows.
    pub fn mask_reps(&self, queries: &[MaskedQuery]) -> Result<(QueryLayout<f32>, Tensor<f32>, Tensor<f32>)> {
        self.calls.set(self.calls.get() + 1);
        let enc = &self.model.enc;
        let layout = QueryLayout::build(queries, enc.n_ent, enc.n_rel)?;
        let mut tape = Tape::<f32>::new();
        let p = self.model.params.bind_frozen(&mut tape);
        let graph = self.cache.bind(&mut tape);
        let mut rng = substream(0, "inference.dropout", 0);
        let (me, mr) = enc.encode_queries(&mut tape, &p, &graph, &layout, &mut rng, false)?;
        let (me, mr) = (tape.value(me).clone(), tape.value(mr).clone());
        Ok((layout, me, mr))
    }

    /// Per query, the distribution of every masked position in canonical order.
    pub fn distributions(&self, queries: &[MaskedQuery], temps: Temperatures) -> Result<Vec<Vec<MaskDist>>> {
        let (layout, me, mr) = self.mask_reps(queries)?;
        let mut out: Vec<Vec<MaskDist>> = vec![Vec::new(); queries.len()];
        let cosine = self.model.cosine();
        for slot in &layout.slots {
            let rep = match slot.kind {
                Kind::Entity => me.row(slot.row),
                Kind::Relation => mr.row(slot.row),
            };
            let dist = score_candidates(slot.kind, rep, self.candidates(slot.kind), temps.get(slot.kind), cosine)?;
            out[slot.query].push(MaskDist {
                position: slot.position,
                dist,
            });
        }
        Ok(out)
    }
}
