use rand::Rng;

use crate::data::{mask_fact, sample_mask_pattern, Fact, Gold, Kind, MaskedQuery, Purpose};
use crate::decoder::{logits, ProbDist};
use crate::encoder::{EncoderParams, PairIndex, QueryLayout};
use crate::error::{Error, Result};
use crate::numerics::{Bound, Scalar, Tape, Var};

/// Masked queries of one batch with their gold components.
#[derive(Clone, Debug, Default)]
pub struct BatchQueries {
    pub queries: Vec<MaskedQuery>,
    pub golds: Vec<Gold>,
}

/// Masks each target fact: a uniform pattern, or one uniform position when `single` is set.
pub fn training_queries<R: Rng + ?Sized>(facts: &[Fact], single: bool, rng: &mut R) -> Result<BatchQueries> {
    let mut out = BatchQueries::default();
    for f in facts {
        let positions = if single {
            vec![rng.random_range(0..f.len())]
        } else {
            sample_mask_pattern(f, rng)
        };
        let (q, g) = mask_fact(f, &positions, Purpose::Training)?;
        out.queries.push(q);
        out.golds.push(g);
    }
    Ok(out)
}

/// Sum of masked-slot NLL terms divided by the batch size.
/// Each part pairs a logit matrix with the gold column of every row.
pub fn ao_ar_loss<T: Scalar>(tape: &mut Tape<T>, parts: Vec<(Var, Vec<usize>)>, batch: usize) -> Result<Var> {
    if batch == 0 {
        return Err(Error::Query("empty batch".into()));
    }
    let mut total: Option<Var> = None;
    for (lg, gold) in parts {
        if gold.is_empty() {
            continue;
        }
        let nll = tape.nll_sum(lg, gold)?;
        total = Some(match total {
            Some(t) => tape.add(t, nll)?,
            None => nll,
        });
    }
    let total = total.ok_or_else(|| Error::Query("batch has no masked slot".into()))?;
    Ok(tape.scale(total, T::from_f64_lossy(1.0 / batch as f64)))
}

/// Off-tape value of the same loss from per-slot distributions.
pub fn nll_of_dists(slots: &[(&ProbDist, u32)], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for (d, g) in slots {
        let lp = d
            .log_probs
            .get(*g as usize)
            .ok_or_else(|| Error::Query(format!("gold {g} outside {} candidates", d.len())))?;
        total -= lp;
    }
    Ok(total / batch as f64)
}

/// Encode `batch` against `observed` and return its masked loss.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Scalar, R: Rng + ?Sized>(
    enc: &EncoderParams,
    tape: &mut Tape<T>,
    p: &Bound,
    observed: &PairIndex<T>,
    batch: &BatchQueries,
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    let layout = QueryLayout::build(&batch.queries, enc.n_ent, enc.n_rel)?;
    let state = enc.encode(tape, p, observed, &layout, rng, training)?;
    let mut ent_gold = vec![0usize; layout.n_ent_masks];
    let mut rel_gold = vec![0usize; layout.n_rel_masks];
    for s in &layout.slots {
        let g = *batch.golds[s.query]
            .get(&s.position)
            .ok_or_else(|| Error::Query(format!("no gold for query {} position {}", s.query, s.position)))?
            as usize;
        match s.kind {
            Kind::Entity => ent_gold[s.row] = g,
            Kind::Relation => rel_gold[s.row] = g,
        }
    }
    let cosine = enc.ablations.cosine_sim;
    let mut parts = Vec::new();
    if layout.n_ent_masks > 0 {
        parts.push((logits(tape, state.ent_masks, state.entities, cosine)?, ent_gold));
    }
    if layout.n_rel_masks > 0 {
        parts.push((logits(tape, state.rel_masks, state.relations, cosine)?, rel_gold));
    }
    ao_ar_loss(tape, parts, batch.queries.len())
}
