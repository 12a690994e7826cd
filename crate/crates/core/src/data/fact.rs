use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Index of an entity in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

/// Index of a relation in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Whether a component is drawn from the entity or the relation vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Entity,
    Relation,
}

impl Kind {
    /// Kind of the component at canonical position `pos` in `[h, r, t, k1, v1, ...]`.
    pub fn at_position(pos: usize) -> Kind {
        match pos {
            0 | 2 => Kind::Entity,
            1 => Kind::Relation,
            p if p % 2 == 1 => Kind::Relation,
            _ => Kind::Entity,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Entity => "entity",
            Kind::Relation => "relation",
        }
    }
}

/// Role of a relation-entity pair inside a fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Head,
    Tail,
    Qual,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Head, Role::Tail, Role::Qual];

    pub fn index(self) -> usize {
        match self {
            Role::Head => 0,
            Role::Tail => 1,
            Role::Qual => 2,
        }
    }
}

/// A single component value at some position of a fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Entity(EntityId),
    Relation(RelationId),
}

impl Component {
    pub fn kind(self) -> Kind {
        match self {
            Component::Entity(_) => Kind::Entity,
            Component::Relation(_) => Kind::Relation,
        }
    }

    pub fn raw(self) -> u32 {
        match self {
            Component::Entity(e) => e.0,
            Component::Relation(r) => r.0,
        }
    }

    pub fn from_raw(kind: Kind, raw: u32) -> Component {
        match kind {
            Kind::Entity => Component::Entity(EntityId(raw)),
            Kind::Relation => Component::Relation(RelationId(raw)),
        }
    }
}

/// A hyper-relational fact: a primary triplet plus an ordered list of
/// qualifier pairs.
///
/// Equality and hashing treat the qualifiers as a multiset, while the
/// stored order is kept so that slot positions are reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fact {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
    pub qualifiers: Vec<(RelationId, EntityId)>,
}

impl Fact {
    pub fn triple(head: u32, rel: u32, tail: u32) -> Fact {
        Fact {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
            qualifiers: Vec::new(),
        }
    }

    pub fn with_qualifier(mut self, key: u32, value: u32) -> Fact {
        self.qualifiers.push((RelationId(key), EntityId(value)));
        self
    }

    pub fn n_qualifiers(&self) -> usize {
        self.qualifiers.len()
    }

    /// Number of components, `3 + 2 * n_qualifiers`.
    pub fn len(&self) -> usize {
        3 + 2 * self.qualifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn component(&self, pos: usize) -> Component {
        match pos {
            0 => Component::Entity(self.head),
            1 => Component::Relation(self.rel),
            2 => Component::Entity(self.tail),
            p => {
                let (k, v) = self.qualifiers[(p - 3) / 2];
                if (p - 3) % 2 == 0 {
                    Component::Relation(k)
                } else {
                    Component::Entity(v)
                }
            }
        }
    }

    pub fn components(&self) -> impl Iterator<Item = Component> + '_ {
        (0..self.len()).map(move |p| self.component(p))
    }

    /// Replace the component at `pos`. The kind must match the position.
    pub fn set_component(&mut self, pos: usize, raw: u32) {
        match pos {
            0 => self.head = EntityId(raw),
            1 => self.rel = RelationId(raw),
            2 => self.tail = EntityId(raw),
            p => {
                let pair = &mut self.qualifiers[(p - 3) / 2];
                if (p - 3) % 2 == 0 {
                    pair.0 = RelationId(raw);
                } else {
                    pair.1 = EntityId(raw);
                }
            }
        }
    }

    /// Relation-entity pairs `(r,h,head), (r,t,tail), (k_i,v_i,qual)...`.
    pub fn decompose(&self) -> Vec<(RelationId, EntityId, Role)> {
        let mut pairs = Vec::with_capacity(self.qualifiers.len() + 2);
        pairs.push((self.rel, self.head, Role::Head));
        pairs.push((self.rel, self.tail, Role::Tail));
        pairs.extend(self.qualifiers.iter().map(|&(k, v)| (k, v, Role::Qual)));
        pairs
    }

    pub fn sorted_qualifiers(&self) -> Vec<(RelationId, EntityId)> {
        let mut q = self.qualifiers.clone();
        q.sort_unstable();
        q
    }
}

impl PartialEq for Fact {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head
            && self.rel == other.rel
            && self.tail == other.tail
            && self.qualifiers.len() == other.qualifiers.len()
            && self.sorted_qualifiers() == other.sorted_qualifiers()
    }
}

impl Eq for Fact {}

impl Hash for Fact {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.head.hash(state);
        self.rel.hash(state);
        self.tail.hash(state);
        self.sorted_qualifiers().hash(state);
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.rel.0, self.tail.0)?;
        for (k, v) in &self.qualifiers {
            write!(f, " [{}: {}]", k.0, v.0)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn decompose_orders_pairs_by_role() {
        let f = Fact::triple(0, 1, 2);
        assert_eq!(
            f.decompose(),
            vec![
                (RelationId(1), EntityId(0), Role::Head),
                (RelationId(1), EntityId(2), Role::Tail)
            ]
        );
        let g = f.with_qualifier(3, 4).with_qualifier(5, 6);
        let pairs = g.decompose();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].2, Role::Head);
        assert_eq!(pairs[1].2, Role::Tail);
        assert!(pairs[2..].iter().all(|p| p.2 == Role::Qual));
        assert_eq!(pairs[3], (RelationId(5), EntityId(6), Role::Qual));
    }

    #[test]
    fn component_positions_follow_canonical_order() {
        let f = Fact::triple(10, 1, 11).with_qualifier(2, 12).with_qualifier(3, 13);
        assert_eq!(f.len(), 7);
        let comps: Vec<_> = f.components().collect();
        assert_eq!(comps[0], Component::Entity(EntityId(10)));
        assert_eq!(comps[1], Component::Relation(RelationId(1)));
        assert_eq!(comps[5], Component::Relation(RelationId(3)));
        assert_eq!(comps[6], Component::Entity(EntityId(13)));
        for (p, c) in comps.iter().enumerate() {
            assert_eq!(Kind::at_position(p), c.kind());
        }
    }

    #[test]
    fn equality_ignores_qualifier_order() {
        let a = Fact::triple(0, 0, 1).with_qualifier(1, 2).with_qualifier(2, 3);
        let b = Fact::triple(0, 0, 1).with_qualifier(2, 3).with_qualifier(1, 2);
        let c = Fact::triple(0, 0, 1).with_qualifier(2, 3).with_qualifier(1, 3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let set: HashSet<Fact> = [a.clone()].into_iter().collect();
        assert!(set.contains(&b));
        // storage order is untouched
        assert_eq!(a.qualifiers[0], (RelationId(1), EntityId(2)));
    }

    #[test]
    fn duplicate_qualifiers_are_a_multiset() {
        let a = Fact::triple(0, 0, 1).with_qualifier(1, 2).with_qualifier(1, 2);
        let b = Fact::triple(0, 0, 1).with_qualifier(1, 2);
        assert_ne!(a, b);
    }

    #[test]
    fn set_component_round_trips() {
        let mut f = Fact::triple(0, 0, 1).with_qualifier(1, 2);
        for p in 0..f.len() {
            let raw = f.component(p).raw() + 7;
            f.set_component(p, raw);
            assert_eq!(f.component(p).raw(), raw);
        }
    }
}
