//! Cyclic re-masking baselines driven by a single-mask predictor.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Fact, Kind, MaskedQuery};
use crate::decoder::ProbDist;
use crate::error::{Error, Result};
use crate::inference::{with_rejection, GenRecord, Generated, Predictor, Temperatures, Validity};
use crate::rng::substream;

/// Anything that scores one masked slot.
pub trait SingleMask {
    fn n_candidates(&self, kind: Kind) -> usize;
    fn predict(&self, query: &MaskedQuery) -> Result<ProbDist>;
}

impl SingleMask for Predictor<'_> {
    fn n_candidates(&self, kind: Kind) -> usize {
        self.candidates(kind).rows()
    }

    fn predict(&self, query: &MaskedQuery) -> Result<ProbDist> {
        if query.mask_count() != 1 {
            return Err(Error::Query(format!("expected one mask, found {}", query.mask_count())));
        }
        let mut d = self.distributions(std::slice::from_ref(query), Temperatures::default())?;
        Ok(d.remove(0).remove(0).dist)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOrder {
    Canonical,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    IterativePrediction,
    GibbsSampling,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<BaselineKind> {
        match s {
            "iterative" | "iterative_prediction" => Ok(BaselineKind::IterativePrediction),
            "gibbs" | "gibbs_sampling" => Ok(BaselineKind::GibbsSampling),
            _ => Err(Error::Config(format!("unknown baseline {s}; expected iterative or gibbs"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub cycles: usize,
    /// Cycles discarded before the output cycle; the output is the state after the last cycle.
    pub burn_in: usize,
    pub top_k: usize,
    pub order: CycleOrder,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            cycles: 11,
            burn_in: 10,
            top_k: 5,
            order: CycleOrder::Canonical,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.cycles {
            return Err(Error::Config(format!("burn_in {} must be below cycles {}", self.burn_in, self.cycles)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleOutput {
    pub fact: Fact,
    pub predictor_calls: usize,
    /// State after every cycle, the last equal to `fact`.
    pub trajectory: Vec<Fact>,
}

/// Renormalised `k` most probable candidates, ties to the lower index.
pub fn top_k_support(dist: &ProbDist, k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.probs[b].total_cmp(&dist.probs[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    let mass: f64 = order.iter().map(|&c| dist.probs[c]).sum();
    order.into_iter().map(|c| (c, dist.probs[c] / mass)).collect()
}

fn run_cycles<P, R, F>(pred: &P, query: &MaskedQuery, cfg: &CycleConfig, rng: &mut R, mut choose: F) -> Result<CycleOutput>
where
    P: SingleMask + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&ProbDist, &mut R) -> usize,
{
    cfg.validate()?;
    let masked = query.masked_positions();
    let mut state = query.clone();
    for &pos in &masked {
        let kind = Kind::at_position(pos);
        let n = pred.n_candidates(kind);
        if n == 0 {
            return Err(Error::Query(format!("no {} candidates", kind.as_str())));
        }
        state.resolve(pos, rng.random_range(0..n) as u32);
    }
    let mut calls = 0;
    let mut trajectory = Vec::with_capacity(cfg.cycles);
    let mut order = masked.clone();
    for _ in 0..cfg.cycles {
        if cfg.order == CycleOrder::Random {
            order.shuffle(rng);
        }
        for &pos in &order {
            state.mask(pos);
            let dist = pred.predict(&state)?;
            calls += 1;
            let c = choose(&dist, rng);
            state.resolve(pos, c as u32);
        }
        trajectory.push(state.to_fact().expect("every slot resolved"));
    }
    Ok(CycleOutput {
        fact: state.to_fact().expect("every slot resolved"),
        predictor_calls: calls,
        trajectory,
    })
}

/// Each cycle re-masks every originally masked slot and writes back the top-1 prediction.
pub fn iterative_prediction<P: SingleMask + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    query: &MaskedQuery,
    cfg: &CycleConfig,
    rng: &mut R,
) -> Result<CycleOutput> {
    run_cycles(pred, query, cfg, rng, |d, _| d.argmax())
}

/// As [`iterative_prediction`], sampling from the renormalised top-k instead.
pub fn gibbs_sampling<P: SingleMask + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    query: &MaskedQuery,
    cfg: &CycleConfig,
    rng: &mut R,
) -> Result<CycleOutput> {
    run_cycles(pred, query, cfg, rng, |d, rng| {
        let support = top_k_support(d, cfg.top_k);
        if support.len() == 1 {
            return support[0].0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(c, p) in &support {
            acc += p;
            if u < acc {
                return c;
            }
        }
        support[support.len() - 1].0
    })
}

pub fn run_baseline<P: SingleMask + ?Sized, R: Rng + ?Sized>(
    kind: BaselineKind,
    pred: &P,
    query: &MaskedQuery,
    cfg: &CycleConfig,
    rng: &mut R,
) -> Result<CycleOutput> {
    match kind {
        BaselineKind::IterativePrediction => iterative_prediction(pred, query, cfg, rng),
        BaselineKind::GibbsSampling => gibbs_sampling(pred, query, cfg, rng),
    }
}

/// Reruns the baseline on the same stream until its output is novel, as diffusion generation does.
#[allow(clippy::too_many_arguments)]
pub fn baseline_with_rejection<P: SingleMask + ?Sized, R: Rng + ?Sized>(
    kind: BaselineKind,
    pred: &P,
    query: &MaskedQuery,
    cfg: &CycleConfig,
    max_attempts: usize,
    known: &HashSet<Fact>,
    oracle: &dyn Validity,
    rng: &mut R,
) -> Result<GenRecord> {
    cfg.validate()?;
    with_rejection(
        || {
            let out = run_baseline(kind, pred, query, cfg, rng)?;
            Ok(Generated {
                fact: out.fact,
                choices: Vec::new(),
                recomputations: out.predictor_calls,
            })
        },
        max_attempts,
        known,
        oracle,
    )
}

/// Per-query stream `(seed, "baseline", i)`, mirroring diffusion evaluation.
pub fn evaluate_baseline<P: SingleMask + ?Sized>(
    kind: BaselineKind,
    pred: &P,
    queries: &[MaskedQuery],
    cfg: &CycleConfig,
    max_attempts: usize,
    seed: u64,
    known: &HashSet<Fact>,
    oracle: &dyn Validity,
) -> Result<Vec<GenRecord>> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = substream(seed, "baseline", i as u64);
            baseline_with_rejection(kind, pred, q, cfg, max_attempts, known, oracle, &mut rng)
        })
        .collect()
}
