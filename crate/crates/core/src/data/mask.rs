//! Masked queries and the masking distribution used for training.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::fact::{Component, Fact, Kind};
use crate::error::{Error, Result};

/// Role of a slot in canonical order `[h, r, t, k1, v1, ...]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    Head,
    Relation,
    Tail,
    QualifierKey,
    QualifierValue,
}

impl SlotRole {
    pub fn at_position(pos: usize) -> SlotRole {
        match pos {
            0 => SlotRole::Head,
            1 => SlotRole::Relation,
            2 => SlotRole::Tail,
            p if p % 2 == 1 => SlotRole::QualifierKey,
            _ => SlotRole::QualifierValue,
        }
    }

    /// Head, primary relation or tail.
    pub fn is_primary(self) -> bool {
        matches!(self, SlotRole::Head | SlotRole::Relation | SlotRole::Tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotState {
    Known(u32),
    Masked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub role: SlotRole,
    pub kind: Kind,
    pub state: SlotState,
    pub position: usize,
}

/// A fact skeleton whose slots are either known components or masks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskedQuery {
    states: Vec<SlotState>,
}

/// Gold components for the masked positions of a query.
pub type Gold = BTreeMap<usize, u32>;

/// Why a query is being built; training queries must contain a mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Training,
    Inference,
}

impl MaskedQuery {
    pub fn from_states(states: Vec<SlotState>) -> Result<MaskedQuery> {
        if states.len() < 3 || states.len() % 2 == 0 {
            return Err(Error::Query(format!(
                "query length {} is not of the form 3 + 2n",
                states.len()
            )));
        }
        Ok(MaskedQuery { states })
    }

    /// Query with every one of its `3 + 2 * n_qualifiers` slots masked.
    pub fn fully_masked(n_qualifiers: usize) -> MaskedQuery {
        MaskedQuery {
            states: vec![SlotState::Masked; 3 + 2 * n_qualifiers],
        }
    }

    pub fn from_fact(fact: &Fact) -> MaskedQuery {
        MaskedQuery {
            states: fact.components().map(|c| SlotState::Known(c.raw())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_qualifiers(&self) -> usize {
        (self.states.len() - 3) / 2
    }

    pub fn state(&self, pos: usize) -> SlotState {
        self.states[pos]
    }

    pub fn states(&self) -> &[SlotState] {
        &self.states
    }

    pub fn slot(&self, pos: usize) -> Slot {
        Slot {
            role: SlotRole::at_position(pos),
            kind: Kind::at_position(pos),
            state: self.states[pos],
            position: pos,
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.states.len()).map(move |p| self.slot(p))
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.states.len())
            .filter(|&p| self.states[p] == SlotState::Masked)
            .collect()
    }

    pub fn mask_count(&self) -> usize {
        self.states.iter().filter(|s| **s == SlotState::Masked).count()
    }

    pub fn known_count(&self) -> usize {
        self.len() - self.mask_count()
    }

    pub fn mask(&mut self, pos: usize) {
        self.states[pos] = SlotState::Masked;
    }

    pub fn resolve(&mut self, pos: usize, raw: u32) {
        self.states[pos] = SlotState::Known(raw);
    }

    /// The fact this query spells out, if no slot is masked.
    pub fn to_fact(&self) -> Option<Fact> {
        let raw = |p: usize| match self.states[p] {
            SlotState::Known(v) => Some(v),
            SlotState::Masked => None,
        };
        let mut fact = Fact::triple(raw(0)?, raw(1)?, raw(2)?);
        for q in 0..self.n_qualifiers() {
            fact = fact.with_qualifier(raw(3 + 2 * q)?, raw(4 + 2 * q)?);
        }
        Some(fact)
    }

    /// Substitute gold components into the masked slots.
    pub fn unmask(&self, gold: &Gold) -> Option<Fact> {
        let mut q = self.clone();
        for (&pos, &raw) in gold {
            q.resolve(pos, raw);
        }
        q.to_fact()
    }

    pub fn known_components(&self) -> impl Iterator<Item = (usize, Component)> + '_ {
        self.slots().filter_map(|s| match s.state {
            SlotState::Known(v) => Some((s.position, Component::from_raw(s.kind, v))),
            SlotState::Masked => None,
        })
    }
}

/// Draw the masked positions for one training fact: the mask count is
/// uniform on `1..=len`, then that many distinct positions are chosen
/// uniformly without replacement. Returned positions are sorted.
pub fn sample_mask_pattern<R: Rng + ?Sized>(fact: &Fact, rng: &mut R) -> Vec<usize> {
    let len = fact.len();
    let n_mask = rng.random_range(1..=len);
    let mut positions = index::sample(rng, len, n_mask).into_vec();
    positions.sort_unstable();
    positions
}

/// Mask the given positions of `fact`, returning the query and the gold map.
pub fn mask_fact(fact: &Fact, positions: &[usize], purpose: Purpose) -> Result<(MaskedQuery, Gold)> {
    if purpose == Purpose::Training && positions.is_empty() {
        return Err(Error::Query("training query without any masked slot".into()));
    }
    let mut query = MaskedQuery::from_fact(fact);
    let mut gold = Gold::new();
    for &pos in positions {
        if pos >= fact.len() {
            return Err(Error::Query(format!(
                "position {pos} outside fact of length {}",
                fact.len()
            )));
        }
        query.mask(pos);
        gold.insert(pos, fact.component(pos).raw());
    }
    Ok((query, gold))
}
