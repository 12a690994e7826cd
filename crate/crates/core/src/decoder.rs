//! Candidate scoring: scaled dot product (or cosine) between mask and
//! candidate representations, softmax-normalized.

use crate::data::Kind;
use crate::encoder::{EncodingState, GraphCache};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Distribution over every entity or every relation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbDist {
    pub kind: Kind,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ProbDist {
    /// Softmax of `logits / temperature`.
    pub fn from_logits(kind: Kind, logits: &[f64], temperature: f64) -> Result<ProbDist> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        if logits.is_empty() {
            return Err(Error::Query("no candidates to score".into()));
        }
        let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
        let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        let lse = m + scaled.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = scaled.iter().map(|&x| x - lse).collect();
        let probs = log_probs.iter().map(|&l| l.exp()).collect();
        Ok(ProbDist { kind, probs, log_probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

fn dot_scale(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// Logit rows for `masks` (`n x d`) against `candidates` (`|C| x d`) on the tape.
pub fn logits<T: Scalar>(tape: &mut Tape<T>, masks: Var, candidates: Var, cosine: bool) -> Result<Var> {
    if cosine {
        let m = tape.l2_normalize_rows(masks);
        let c = tape.l2_normalize_rows(candidates);
        tape.matmul_bt(m, c)
    } else {
        let d = tape.shape(masks)[1];
        let raw = tape.matmul_bt(masks, candidates)?;
        Ok(tape.scale(raw, T::from_f64_lossy(dot_scale(d))))
    }
}

/// Raw (temperature 1) logits of one mask vector, computed off-tape.
pub fn raw_logits<T: Scalar>(mask_rep: &[T], candidates: &Tensor<T>, cosine: bool) -> Result<Vec<f64>> {
    if candidates.cols() != mask_rep.len() {
        return Err(Error::shape(
            "score_candidates",
            format!("mask width {} vs candidates {:?}", mask_rep.len(), candidates.shape()),
        ));
    }
    if candidates.rows() == 0 {
        return Err(Error::Query("no candidates to score".into()));
    }
    let norm = |v: &[T]| v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt().max(1e-12);
    let m_norm = norm(mask_rep);
    Ok((0..candidates.rows())
        .map(|r| {
            let c = candidates.row(r);
            let dot: f64 = mask_rep.iter().zip(c).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            if cosine {
                dot / (m_norm * norm(c))
            } else {
                dot * dot_scale(mask_rep.len())
            }
        })
        .collect())
}

/// Distribution of one masked slot over all candidates.
pub fn score_candidates<T: Scalar>(
    kind: Kind,
    mask_rep: &[T],
    candidates: &Tensor<T>,
    temperature: f64,
    cosine: bool,
) -> Result<ProbDist> {
    ProbDist::from_logits(kind, &raw_logits(mask_rep, candidates, cosine)?, temperature)
}

/// The full candidate table of `kind` from an encoding.
pub fn typed_candidates(kind: Kind, state: &EncodingState) -> Var {
    match kind {
        Kind::Entity => state.entities,
        Kind::Relation => state.relations,
    }
}

/// As [`typed_candidates`] for a cached graph pass.
pub fn cached_candidates<T: Scalar>(kind: Kind, cache: &GraphCache<T>) -> &Tensor<T> {
    match kind {
        Kind::Entity => cache.final_entities(),
        Kind::Relation => cache.final_relations(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::random_tensor;
    use crate::rng::substream;
    use proptest::prelude::*;

    #[test]
    fn identical_candidates_give_uniform() {
        let cands = Tensor::<f64>::filled(4, 3, 0.7);
        let d = score_candidates(Kind::Entity, &[1.0, -2.0, 0.5], &cands, 1.0, false).unwrap();
        for &p in &d.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_softmax() {
        let cands = Tensor::<f64>::from_vec(3, 1, vec![2.0, 1.0, 0.0]).unwrap();
        let d = score_candidates(Kind::Relation, &[1.0], &cands, 1.0, false).unwrap();
        let z: f64 = [2.0f64, 1.0, 0.0].iter().map(|x| x.exp()).sum();
        for (i, x) in [2.0f64, 1.0, 0.0].iter().enumerate() {
            assert!((d.probs[i] - x.exp() / z).abs() < 1e-12);
        }
        assert_eq!(d.argmax(), 0);
    }

    #[test]
    fn errors() {
        let cands = Tensor::<f64>::zeros(3, 2);
        assert!(score_candidates(Kind::Entity, &[1.0, 0.0], &cands, 0.0, false).is_err());
        assert!(score_candidates(Kind::Entity, &[1.0, 0.0], &cands, -1.0, false).is_err());
        assert!(score_candidates(Kind::Entity, &[1.0], &cands, 1.0, false).is_err());
        let empty = Tensor::<f64>::zeros(0, 2);
        assert!(score_candidates(Kind::Entity, &[1.0, 0.0], &empty, 1.0, false).is_err());
    }

    #[test]
    fn tape_and_direct_scoring_agree() {
        let mut rng = substream(0, "dec", 0);
        for cosine in [false, true] {
            let m = random_tensor(2, 8, 1.0, &mut rng);
            let c = random_tensor(6, 8, 1.0, &mut rng);
            let mut tape = Tape::new();
            let (mv, cv) = (tape.constant(m.clone()), tape.constant(c.clone()));
            let l = logits(&mut tape, mv, cv, cosine).unwrap();
            for r in 0..2 {
                let direct = raw_logits(m.row(r), &c, cosine).unwrap();
                for (a, b) in tape.value(l).row(r).iter().zip(&direct) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn normalized_and_argmax_temperature_invariant(
            seed in 0u64..1000,
            temp in 0.05f64..5.0,
        ) {
            let mut rng = substream(seed, "dec-prop", 0);
            let m = random_tensor(1, 6, 2.0, &mut rng);
            let c = random_tensor(9, 6, 2.0, &mut rng);
            let base = score_candidates(Kind::Entity, m.row(0), &c, 1.0, false).unwrap();
            let hot = score_candidates(Kind::Entity, m.row(0), &c, temp, false).unwrap();
            prop_assert!((hot.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(base.argmax(), hot.argmax());
        }

        #[test]
        fn candidate_permutation_permutes_probs(seed in 0u64..1000) {
            let mut rng = substream(seed, "dec-perm", 0);
            let m = random_tensor(1, 4, 1.0, &mut rng);
            let c = random_tensor(5, 4, 1.0, &mut rng);
            let perm = [2usize, 4, 0, 1, 3];
            let a = score_candidates(Kind::Entity, m.row(0), &c, 0.7, false).unwrap();
            let b = score_candidates(Kind::Entity, m.row(0), &c.gather_rows(&perm), 0.7, false).unwrap();
            for (i, &src) in perm.iter().enumerate() {
                prop_assert!((b.probs[i] - a.probs[src]).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_ignores_mask_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = substream(seed, "dec-cos", 0);
            let m = random_tensor(1, 5, 1.0, &mut rng);
            let c = random_tensor(7, 5, 1.0, &mut rng);
            let a = score_candidates(Kind::Entity, m.row(0), &c, 1.0, true).unwrap();
            let scaled = m.map(|x| x * scale);
            let b = score_candidates(Kind::Entity, scaled.row(0), &c, 1.0, true).unwrap();
            for (x, y) in a.probs.iter().zip(&b.probs) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
