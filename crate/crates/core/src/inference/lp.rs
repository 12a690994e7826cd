use std::collections::HashSet;

use serde::Serialize;

use crate::data::{mask_fact, Fact, FilterIndex, MaskedQuery, Purpose};
use crate::decoder::ProbDist;
use crate::error::{Error, Result};
use crate::inference::{Predictor, Temperatures};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionSet {
    /// Head, relation and tail of the primary triple.
    Primary,
    /// Every position including qualifiers.
    All,
}

impl PositionSet {
    pub fn positions(self, fact: &Fact) -> std::ops::Range<usize> {
        match self {
            PositionSet::Primary => 0..3,
            PositionSet::All => 0..fact.len(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RankResult {
    pub fact: usize,
    pub position: usize,
    pub gold: u32,
    /// Filtered rank, 1-based.
    pub rank: usize,
    /// Highest-probability candidates, unfiltered.
    pub top: Vec<(u32, f64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LpMetrics {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

#[derive(Clone, Debug)]
pub struct LpReport {
    pub metrics: LpMetrics,
    pub results: Vec<RankResult>,
}

/// 1 + number of candidates that are not filtered and score above `gold`,
/// counting equal scores at lower indices as above.
pub fn filtered_rank(dist: &ProbDist, gold: u32, filter: Option<&HashSet<u32>>) -> usize {
    let g = gold as usize;
    let pg = dist.probs[g];
    1 + dist
        .probs
        .iter()
        .enumerate()
        .filter(|&(c, &p)| {
            c != g && !filter.is_some_and(|f| f.contains(&(c as u32))) && (p > pg || (p == pg && c < g))
        })
        .count()
}

fn top_candidates(dist: &ProbDist, k: usize) -> Vec<(u32, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.probs[b].total_cmp(&dist.probs[a]).then(a.cmp(&b)));
    order.into_iter().take(k).map(|c| (c as u32, dist.probs[c])).collect()
}

pub fn mrr_hits(ranks: &[usize]) -> Result<LpMetrics> {
    if ranks.is_empty() {
        return Err(Error::Query("no ranks to summarize".into()));
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(LpMetrics {
        count: ranks.len(),
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: frac(1),
        hits3: frac(3),
        hits10: frac(10),
    })
}

/// Rank the gold value of the single masked slot of `query`.
pub fn rank_single_mask(
    pred: &Predictor,
    query: &MaskedQuery,
    gold: u32,
    filter: &FilterIndex,
    top_k: usize,
) -> Result<RankResult> {
    if query.mask_count() != 1 {
        return Err(Error::Query(format!("link prediction needs one mask, query has {}", query.mask_count())));
    }
    let dists = pred.distributions(std::slice::from_ref(query), Temperatures::default())?;
    let md = &dists[0][0];
    let mut fact = query.clone();
    fact.resolve(md.position, gold);
    let fact = fact.to_fact().expect("fully resolved");
    let filt = filter.answers_for(&fact, md.position);
    Ok(RankResult {
        fact: 0,
        position: md.position,
        gold,
        rank: filtered_rank(&md.dist, gold, filt),
        top: top_candidates(&md.dist, top_k),
    })
}

/// `(fact index, position)` pairs evaluated for `positions`.
pub fn lp_targets(facts: &[Fact], positions: PositionSet) -> Vec<(usize, usize)> {
    facts
        .iter()
        .enumerate()
        .flat_map(|(i, f)| positions.positions(f).map(move |p| (i, p)))
        .collect()
}

/// Filtered ranking of every selected position of every fact, batched.
pub fn evaluate_lp(
    pred: &Predictor,
    facts: &[Fact],
    filter: &FilterIndex,
    positions: PositionSet,
    batch_size: usize,
    top_k: usize,
) -> Result<LpReport> {
    let targets = lp_targets(facts, positions);
    let mut results = Vec::with_capacity(targets.len());
    for chunk in targets.chunks(batch_size.max(1)) {
        let queries: Vec<MaskedQuery> = chunk
            .iter()
            .map(|&(i, p)| mask_fact(&facts[i], &[p], Purpose::Inference).map(|(q, _)| q))
            .collect::<Result<_>>()?;
        let dists = pred.distributions(&queries, Temperatures::default())?;
        for (&(i, p), d) in chunk.iter().zip(&dists) {
            let gold = facts[i].component(p).raw();
            let filt = filter.answers_for(&facts[i], p);
            results.push(RankResult {
                fact: i,
                position: p,
                gold,
                rank: filtered_rank(&d[0].dist, gold, filt),
                top: top_candidates(&d[0].dist, top_k),
            });
        }
    }
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    Ok(LpReport {
        metrics: mrr_hits(&ranks)?,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Kind;
    use crate::rng::substream;
    use rand::Rng;

    fn dist(p: Vec<f64>) -> ProbDist {
        let log_probs = p.iter().map(|x| x.ln()).collect();
        ProbDist {
            kind: Kind::Entity,
            probs: p,
            log_probs,
        }
    }

    #[test]
    fn strict_best_is_rank_one_and_ties_follow_index() {
        assert_eq!(filtered_rank(&dist(vec![0.1, 0.6, 0.3]), 1, None), 1);
        let tied = dist(vec![0.4, 0.4, 0.2]);
        assert_eq!(filtered_rank(&tied, 0, None), 1);
        assert_eq!(filtered_rank(&tied, 1, None), 2);
        let f: HashSet<u32> = [0, 1].into();
        assert_eq!(filtered_rank(&tied, 1, Some(&f)), 1);
        assert_eq!(filtered_rank(&dist(vec![0.5, 0.3, 0.2]), 2, Some(&f)), 1);
    }

    #[test]
    fn rank_matches_brute_force() {
        let mut rng = substream(0, "rank", 0);
        for _ in 0..100 {
            // Coarse values so ties occur.
            let raw: Vec<f64> = (0..20).map(|_| rng.random_range(1..6) as f64).collect();
            let z: f64 = raw.iter().sum();
            let d = dist(raw.iter().map(|x| x / z).collect());
            let gold = rng.random_range(0..20u32);
            let filt: HashSet<u32> = (0..20).filter(|_| rng.random_bool(0.3)).collect();
            let mut brute = 1;
            for c in 0..20u32 {
                if c == gold || filt.contains(&c) {
                    continue;
                }
                let (pc, pg) = (d.probs[c as usize], d.probs[gold as usize]);
                if pc > pg || (pc == pg && c < gold) {
                    brute += 1;
                }
            }
            assert_eq!(filtered_rank(&d, gold, Some(&filt)), brute);
        }
    }

    #[test]
    fn metric_arithmetic() {
        let m = mrr_hits(&[1, 1, 1]).unwrap();
        assert_eq!((m.mrr, m.hits1), (1.0, 1.0));
        let m = mrr_hits(&[2, 4]).unwrap();
        assert_eq!((m.mrr, m.hits1, m.hits10), (0.375, 0.0, 1.0));
        assert!(mrr_hits(&[]).is_err());
        let mut rng = substream(1, "ranks", 0);
        let ranks: Vec<usize> = (0..1000).map(|_| rng.random_range(1..50)).collect();
        let m = mrr_hits(&ranks).unwrap();
        let mut mrr = 0.0;
        let mut h10 = 0usize;
        for &r in &ranks {
            mrr += 1.0 / r as f64;
            if r <= 10 {
                h10 += 1;
            }
        }
        assert!((m.mrr - mrr / 1000.0).abs() < 1e-12);
        assert_eq!(m.hits10, h10 as f64 / 1000.0);
    }
}
