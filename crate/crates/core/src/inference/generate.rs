use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Fact, Kind, MaskedQuery, RuleOracle};
use crate::decoder::ProbDist;
use crate::error::{Error, Result};
use crate::inference::{MaskDist, Predictor, Temperatures};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Number of denoising steps.
    pub steps: usize,
    /// Curvature of the survival curve; 0 is the linear limit.
    pub schedule_lambda: f64,
    pub delta_ent: f64,
    pub delta_rel: f64,
    pub tau_ent: f64,
    pub tau_rel: f64,
    pub max_attempts: usize,
    pub seed: u64,
    /// Reuse mask distributions until a mask is resolved.
    pub cache: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            steps: 1000,
            schedule_lambda: 0.0,
            delta_ent: 0.15,
            delta_rel: 0.05,
            tau_ent: 1.0,
            tau_rel: 1.0,
            max_attempts: 10,
            seed: 0,
            cache: true,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        for (name, v) in [("delta_ent", self.delta_ent), ("delta_rel", self.delta_rel)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        for (name, v) in [("tau_ent", self.tau_ent), ("tau_rel", self.tau_rel)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if !(self.schedule_lambda >= 0.0 && self.schedule_lambda.is_finite()) {
            return Err(Error::Config("schedule_lambda must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn delta(&self, kind: Kind) -> f64 {
        match kind {
            Kind::Entity => self.delta_ent,
            Kind::Relation => self.delta_rel,
        }
    }

    pub fn temperatures(&self) -> Temperatures {
        Temperatures {
            ent: self.tau_ent,
            rel: self.tau_rel,
        }
    }
}

/// Survival `sigma(t) = (1 - exp(-lambda (1 - t/T))) / (1 - exp(-lambda))`,
/// so `sigma(0) = 1` and `sigma(T) = 0`; `lambda = 0` gives `1 - t/T`.
#[derive(Clone, Copy, Debug)]
pub struct UnmaskSchedule {
    steps: usize,
    lambda: f64,
}

pub fn unmask_schedule(steps: usize, lambda: f64) -> Result<UnmaskSchedule> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config("schedule_lambda must be finite and non-negative".into()));
    }
    Ok(UnmaskSchedule { steps, lambda })
}

impl UnmaskSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn survival(&self, t: usize) -> f64 {
        let x = 1.0 - t.min(self.steps) as f64 / self.steps as f64;
        if self.lambda < 1e-9 {
            x
        } else {
            (-(-self.lambda * x).exp_m1()) / (-(-self.lambda).exp_m1())
        }
    }

    /// Probability that a slot still masked before step `t` (1-based) is resolved at `t`.
    pub fn resolve_probability(&self, t: usize) -> f64 {
        if t >= self.steps {
            return 1.0;
        }
        let prev = self.survival(t - 1);
        if prev <= 0.0 {
            return 1.0;
        }
        ((prev - self.survival(t)) / prev).clamp(0.0, 1.0)
    }
}

/// Minimal highest-probability prefix with mass at least `delta`, renormalized.
/// Order is probability descending, index ascending on ties.
pub fn top_p_support(dist: &ProbDist, delta: f64) -> Result<Vec<(usize, f64)>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("top-p threshold {delta} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.probs[b].total_cmp(&dist.probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for c in order {
        kept.push((c, dist.probs[c]));
        mass += dist.probs[c];
        if mass >= delta {
            break;
        }
    }
    Ok(kept.into_iter().map(|(c, p)| (c, p / mass)).collect())
}

pub fn top_p_sample<R: Rng + ?Sized>(dist: &ProbDist, delta: f64, rng: &mut R) -> Result<usize> {
    let support = top_p_support(dist, delta)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(c, p) in &support {
        acc += p;
        if u < acc {
            return Ok(c);
        }
    }
    Ok(support.last().expect("non-empty support").0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotChoice {
    pub position: usize,
    pub value: u32,
    pub prob: f64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub fact: Fact,
    pub choices: Vec<SlotChoice>,
    pub recomputations: usize,
}

fn denoise<R: Rng + ?Sized>(
    pred: &Predictor,
    query: &MaskedQuery,
    cfg: &GenerationConfig,
    rng: &mut R,
    cached: bool,
) -> Result<Generated> {
    if query.mask_count() == 0 {
        return Err(Error::Query("generation needs at least one masked slot".into()));
    }
    cfg.validate()?;
    let schedule = unmask_schedule(cfg.steps, cfg.schedule_lambda)?;
    let temps = cfg.temperatures();
    let mut state = query.clone();
    let mut dists: Option<Vec<MaskDist>> = None;
    let mut recomputations = 0;
    let mut choices = Vec::new();
    for t in 1..=schedule.steps() {
        let remaining = state.masked_positions();
        if remaining.is_empty() {
            break;
        }
        let p = schedule.resolve_probability(t);
        let chosen: Vec<usize> = remaining.into_iter().filter(|_| p >= 1.0 || rng.random::<f64>() < p).collect();
        if !cached || (dists.is_none() && !chosen.is_empty()) {
            dists = Some(pred.distributions(std::slice::from_ref(&state), temps)?.remove(0));
            recomputations += 1;
        }
        if chosen.is_empty() {
            continue;
        }
        let current = dists.take().expect("computed above");
        for pos in chosen {
            let md = current.iter().find(|m| m.position == pos).expect("masked position scored");
            let value = top_p_sample(&md.dist, cfg.delta(md.dist.kind), rng)?;
            state.resolve(pos, value as u32);
            choices.push(SlotChoice {
                position: pos,
                value: value as u32,
                prob: md.dist.probs[value],
                step: t,
            });
        }
        if !cached {
            dists = None;
        }
    }
    Ok(Generated {
        fact: state.to_fact().expect("final step resolves every mask"),
        choices,
        recomputations,
    })
}

/// Iterative denoising; distributions are recomputed only after a step that resolved a mask.
pub fn generate_fact<R: Rng + ?Sized>(
    pred: &Predictor,
    query: &MaskedQuery,
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Result<Generated> {
    denoise(pred, query, cfg, rng, cfg.cache)
}

/// Reference decoder recomputing distributions at every step.
pub fn generate_fact_uncached<R: Rng + ?Sized>(
    pred: &Predictor,
    query: &MaskedQuery,
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Result<Generated> {
    denoise(pred, query, cfg, rng, false)
}

/// Judges whether a generated fact is correct.
pub trait Validity {
    fn is_valid(&self, fact: &Fact) -> bool;
}

impl Validity for RuleOracle {
    fn is_valid(&self, fact: &Fact) -> bool {
        self.valid(fact)
    }
}

/// Exact match against held-out facts.
pub struct HeldOutOracle(pub HashSet<Fact>);

impl Validity for HeldOutOracle {
    fn is_valid(&self, fact: &Fact) -> bool {
        self.0.contains(fact)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ValidNovel,
    ValidDuplicateExhausted,
    Invalid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenRecord {
    pub outcome: Outcome,
    pub attempts: usize,
    pub fact: Fact,
    pub choices: Vec<SlotChoice>,
    /// Oracle verdict on the first attempt, novel or not.
    pub first_valid: bool,
}

/// Draws from `attempt` until a fact outside `known` appears or the cap is hit.
pub fn with_rejection<F>(mut attempt: F, max_attempts: usize, known: &HashSet<Fact>, oracle: &dyn Validity) -> Result<GenRecord>
where
    F: FnMut() -> Result<Generated>,
{
    if max_attempts == 0 {
        return Err(Error::Config("max_attempts must be at least 1".into()));
    }
    let mut first_valid = None;
    let mut last = None;
    for n in 1..=max_attempts {
        let g = attempt()?;
        let valid = oracle.is_valid(&g.fact);
        first_valid.get_or_insert(valid);
        if !known.contains(&g.fact) {
            return Ok(GenRecord {
                outcome: if valid { Outcome::ValidNovel } else { Outcome::Invalid },
                attempts: n,
                fact: g.fact,
                choices: g.choices,
                first_valid: first_valid.unwrap_or(false),
            });
        }
        last = Some(g);
    }
    let g = last.expect("at least one attempt");
    Ok(GenRecord {
        outcome: Outcome::ValidDuplicateExhausted,
        attempts: max_attempts,
        fact: g.fact,
        choices: g.choices,
        first_valid: first_valid.unwrap_or(false),
    })
}

pub fn generate_with_rejection<R: Rng + ?Sized>(
    pred: &Predictor,
    query: &MaskedQuery,
    cfg: &GenerationConfig,
    known: &HashSet<Fact>,
    oracle: &dyn Validity,
    rng: &mut R,
) -> Result<GenRecord> {
    with_rejection(|| generate_fact(pred, query, cfg, rng), cfg.max_attempts, known, oracle)
}

/// Generate for every query with an independent per-query stream `(seed, "generate", i)`.
pub fn evaluate_generation(
    pred: &Predictor,
    queries: &[MaskedQuery],
    cfg: &GenerationConfig,
    known: &HashSet<Fact>,
    oracle: &dyn Validity,
) -> Result<Vec<GenRecord>> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = substream(cfg.seed, "generate", i as u64);
            generate_with_rejection(pred, q, cfg, known, oracle, &mut rng)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GenSummary {
    pub queries: usize,
    pub valid_novel: usize,
    pub invalid: usize,
    pub exhausted: usize,
    pub total_attempts: usize,
    /// Fraction of queries judged correct; exhausted queries count as incorrect.
    pub accuracy: f64,
    pub vn_rate: f64,
    /// Attempts per valid and novel fact; infinite when there are none.
    pub e_gen: f64,
    pub first_attempt_valid: f64,
}

pub fn summarize(records: &[GenRecord]) -> GenSummary {
    let n = records.len();
    let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
    let vn = count(Outcome::ValidNovel);
    let attempts: usize = records.iter().map(|r| r.attempts).sum();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    GenSummary {
        queries: n,
        valid_novel: vn,
        invalid: count(Outcome::Invalid),
        exhausted: count(Outcome::ValidDuplicateExhausted),
        total_attempts: attempts,
        accuracy: rate(vn),
        vn_rate: rate(vn),
        e_gen: if vn == 0 { f64::INFINITY } else { attempts as f64 / vn as f64 },
        first_attempt_valid: rate(records.iter().filter(|r| r.first_valid).count()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: Vec<f64>) -> ProbDist {
        ProbDist::from_logits(Kind::Entity, &p.iter().map(|x| x.ln()).collect::<Vec<_>>(), 1.0).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        for lambda in [0.0, 0.5, 3.0] {
            let s = unmask_schedule(50, lambda).unwrap();
            assert!((s.survival(0) - 1.0).abs() < 1e-12);
            assert!(s.survival(50).abs() < 1e-12);
            assert_eq!(s.resolve_probability(50), 1.0);
            for t in 1..50 {
                assert!(s.survival(t) < s.survival(t - 1));
            }
        }
        let one = unmask_schedule(1, 0.0).unwrap();
        assert_eq!(one.resolve_probability(1), 1.0);
        assert!(unmask_schedule(0, 0.0).is_err());
    }

    #[test]
    fn schedule_monte_carlo() {
        let s = unmask_schedule(10, 1.5).unwrap();
        let mut rng = substream(0, "sched", 0);
        let mut at_risk = vec![0usize; 11];
        let mut resolved = vec![0usize; 11];
        let mut total = 0usize;
        for _ in 0..100_000 {
            let mut remaining = 3;
            for t in 1..=10 {
                if remaining == 0 {
                    break;
                }
                at_risk[t] += remaining;
                let p = s.resolve_probability(t);
                let n = (0..remaining).filter(|_| p >= 1.0 || rng.random::<f64>() < p).count();
                resolved[t] += n;
                remaining -= n;
            }
            total += 3 - remaining;
        }
        assert_eq!(total, 300_000);
        for t in 1..=10 {
            let freq = resolved[t] as f64 / at_risk[t] as f64;
            assert!((freq - s.resolve_probability(t)).abs() < 0.01, "step {t}: {freq}");
        }
    }

    #[test]
    fn top_p_hand_case() {
        let d = dist(vec![0.5, 0.3, 0.2]);
        let s = top_p_support(&d, 0.7).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].0, s[1].0), (0, 1));
        assert!((s[0].1 - 0.625).abs() < 1e-12 && (s[1].1 - 0.375).abs() < 1e-12);
        let mut rng = substream(1, "tp", 0);
        for _ in 0..100 {
            assert_eq!(top_p_sample(&d, 1e-9, &mut rng).unwrap(), 0);
        }
        assert!(top_p_support(&d, 0.0).is_err());
        assert!(top_p_support(&d, 1.5).is_err());
    }

    #[test]
    fn top_p_full_matches_distribution() {
        let d = dist(vec![0.05, 0.4, 0.25, 0.3]);
        let mut rng = substream(2, "tp", 0);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[top_p_sample(&d, 1.0, &mut rng).unwrap()] += 1;
        }
        for (c, &n) in counts.iter().enumerate() {
            assert!((n as f64 / 1e5 - d.probs[c]).abs() < 0.01);
        }
    }

    struct Always(bool);
    impl Validity for Always {
        fn is_valid(&self, _: &Fact) -> bool {
            self.0
        }
    }

    fn gen(f: Fact) -> Generated {
        Generated {
            fact: f,
            choices: vec![],
            recomputations: 0,
        }
    }

    #[test]
    fn rejection_outcomes() {
        let known: HashSet<Fact> = [Fact::triple(0, 0, 0)].into();
        let r = with_rejection(|| Ok(gen(Fact::triple(1, 0, 0))), 10, &known, &Always(true)).unwrap();
        assert_eq!((r.outcome, r.attempts), (Outcome::ValidNovel, 1));
        let mut n = 0;
        let r = with_rejection(
            || {
                n += 1;
                Ok(gen(Fact::triple(0, 0, 0)))
            },
            10,
            &known,
            &Always(true),
        )
        .unwrap();
        assert_eq!((r.outcome, r.attempts, n), (Outcome::ValidDuplicateExhausted, 10, 10));
        let mut k = 0;
        let r = with_rejection(
            || {
                k += 1;
                Ok(gen(Fact::triple(if k < 3 { 0 } else { 2 }, 0, 0)))
            },
            10,
            &known,
            &Always(false),
        )
        .unwrap();
        assert_eq!((r.outcome, r.attempts), (Outcome::Invalid, 3));

        let recs = vec![
            GenRecord {
                outcome: Outcome::ValidNovel,
                attempts: 3,
                fact: Fact::triple(0, 0, 1),
                choices: vec![],
                first_valid: true,
            },
            GenRecord {
                outcome: Outcome::Invalid,
                attempts: 1,
                fact: Fact::triple(0, 0, 2),
                choices: vec![],
                first_valid: false,
            },
        ];
        let s = summarize(&recs);
        assert_eq!(s.vn_rate, 0.5);
        assert_eq!(s.e_gen, 4.0);
    }
}
