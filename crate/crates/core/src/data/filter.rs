//! Filtered-ranking index: for every fact with one blanked position, the set
//! of gold components observed across all splits.

use std::collections::{HashMap, HashSet};

use crate::data::fact::Fact;
use crate::data::mask::{MaskedQuery, SlotState};
use crate::data::Dataset;

/// Order-insensitive key for a fact with exactly one blank.
///
/// Primary slots are stored in place; the qualifier carrying the blank (if
/// any) is kept apart and the remaining qualifiers are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlankKey {
    primary: [Option<u32>; 3],
    blank_pair: Option<(Option<u32>, Option<u32>)>,
    others: Vec<(u32, u32)>,
}

impl BlankKey {
    pub fn new(fact: &Fact, blank: usize) -> BlankKey {
        let prim = |p: usize| (p != blank).then(|| fact.component(p).raw());
        let mut blank_pair = None;
        let mut others = Vec::with_capacity(fact.n_qualifiers());
        for (i, (k, v)) in fact.qualifiers.iter().enumerate() {
            let (kp, vp) = (3 + 2 * i, 4 + 2 * i);
            if blank == kp {
                blank_pair = Some((None, Some(v.0)));
            } else if blank == vp {
                blank_pair = Some((Some(k.0), None));
            } else {
                others.push((k.0, v.0));
            }
        }
        others.sort_unstable();
        BlankKey {
            primary: [prim(0), prim(1), prim(2)],
            blank_pair,
            others,
        }
    }

    /// Key for a single-mask query; `None` if the query does not have exactly one mask.
    pub fn from_query(query: &MaskedQuery) -> Option<BlankKey> {
        let masked = query.masked_positions();
        if masked.len() != 1 {
            return None;
        }
        let mut filled = query.clone();
        filled.resolve(masked[0], 0);
        let fact = filled.to_fact()?;
        debug_assert!(matches!(query.state(masked[0]), SlotState::Masked));
        Some(BlankKey::new(&fact, masked[0]))
    }
}

#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    sets: HashMap<BlankKey, HashSet<u32>>,
}

impl FilterIndex {
    pub fn new() -> FilterIndex {
        FilterIndex::default()
    }

    pub fn build(dataset: &Dataset) -> FilterIndex {
        let mut index = FilterIndex::new();
        for fact in dataset.all_facts() {
            index.insert(fact);
        }
        index
    }

    pub fn insert(&mut self, fact: &Fact) {
        for pos in 0..fact.len() {
            self.sets
                .entry(BlankKey::new(fact, pos))
                .or_default()
                .insert(fact.component(pos).raw());
        }
    }

    pub fn answers(&self, key: &BlankKey) -> Option<&HashSet<u32>> {
        self.sets.get(key)
    }

    pub fn answers_for(&self, fact: &Fact, pos: usize) -> Option<&HashSet<u32>> {
        self.answers(&BlankKey::new(fact, pos))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}
