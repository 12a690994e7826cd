//! Rule-governed synthetic HKG generator and its validity oracle.
//!
//! Entities are partitioned into typed groups. Base relations are random
//! relations between groups with a fixed out-degree; composed relations are
//! depth-2 compositions `c(x, z) <=> a(x, y) and b(y, z)` over the base facts.
//! Qualifier rules attach `(key, via(anchor))` to facts of a relation
//! family, where `via` is a functional base relation and `anchor` is the
//! head or tail of the fact. Every base fact lands in the training split;
//! held-out splits are drawn from composed facts, whose premises are thus
//! always observable in training.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Fact, Vocab};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseRelationSpec {
    pub name: String,
    pub domain: String,
    pub range: String,
    pub out_degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposedRelationSpec {
    pub name: String,
    pub first: String,
    pub second: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Head,
    Tail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualifierRuleSpec {
    pub relations: Vec<String>,
    pub key: String,
    pub via: String,
    pub anchor: Anchor,
}

/// Synthetic generator configuration (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Probability that an applicable qualifier rule is attached to a fact.
    pub qualifier_rate: f64,
    /// Cap on the total number of emitted facts; exceeding the rule
    /// capacity is an error.
    #[serde(default)]
    pub max_facts: Option<usize>,
    pub groups: Vec<GroupSpec>,
    pub base_relations: Vec<BaseRelationSpec>,
    #[serde(default)]
    pub composed_relations: Vec<ComposedRelationSpec>,
    #[serde(default)]
    pub qualifier_rules: Vec<QualifierRuleSpec>,
}

impl Default for SynthConfig {
    /// 200 entities, 8 relations, roughly 3000 training facts.
    fn default() -> Self {
        let group = |name: &str, size| GroupSpec {
            name: name.into(),
            size,
        };
        let base = |name: &str, domain: &str, range: &str, out_degree| BaseRelationSpec {
            name: name.into(),
            domain: domain.into(),
            range: range.into(),
            out_degree,
        };
        let comp = |name: &str, first: &str, second: &str| ComposedRelationSpec {
            name: name.into(),
            first: first.into(),
            second: second.into(),
        };
        SynthConfig {
            seed: 7,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            qualifier_rate: 0.3,
            max_facts: None,
            groups: vec![group("g0", 80), group("g1", 60), group("g2", 40), group("g3", 20)],
            base_relations: vec![
                base("b0", "g0", "g1", 3),
                base("b1", "g1", "g2", 2),
                base("b2", "g0", "g0", 4),
                base("b3", "g0", "g3", 1),
            ],
            composed_relations: vec![
                comp("c0", "b0", "b1"),
                comp("c1", "b2", "b0"),
                comp("c2", "b2", "b2"),
                comp("c3", "b2", "b3"),
            ],
            qualifier_rules: vec![
                QualifierRuleSpec {
                    relations: vec!["b0".into(), "c0".into(), "c1".into()],
                    key: "b3".into(),
                    via: "b3".into(),
                    anchor: Anchor::Head,
                },
                QualifierRuleSpec {
                    relations: vec!["b2".into(), "c2".into()],
                    key: "b3".into(),
                    via: "b3".into(),
                    anchor: Anchor::Tail,
                },
            ],
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<SynthConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualifierRule {
    pub relations: Vec<u32>,
    pub key: u32,
    pub via: u32,
    pub anchor: Anchor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub relation: u32,
    pub first: u32,
    pub second: u32,
}

/// Serializable rule set: entity groups, ground base facts, compositions
/// and qualifier rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub entity_group: Vec<u32>,
    pub relation_count: u32,
    /// Base edges per relation; empty for composed relations.
    pub base_edges: Vec<Vec<(u32, u32)>>,
    pub compositions: Vec<Composition>,
    pub qualifier_rules: Vec<QualifierRule>,
}

/// Deterministic membership test for rule-valid facts.
#[derive(Clone, Debug)]
pub struct RuleOracle {
    spec: OracleSpec,
    edges: HashSet<(u32, u32, u32)>,
    successors: HashMap<(u32, u32), Vec<u32>>,
    function: HashMap<(u32, u32), u32>,
    composition_of: HashMap<u32, (u32, u32)>,
}

impl RuleOracle {
    pub fn new(spec: OracleSpec) -> RuleOracle {
        let mut edges = HashSet::new();
        let mut successors: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (rel, list) in spec.base_edges.iter().enumerate() {
            for &(h, t) in list {
                edges.insert((h, rel as u32, t));
                successors.entry((rel as u32, h)).or_default().push(t);
            }
        }
        let mut function = HashMap::new();
        for ((rel, h), succ) in &successors {
            if succ.len() == 1 {
                function.insert((*rel, *h), succ[0]);
            }
        }
        let composition_of = spec
            .compositions
            .iter()
            .map(|c| (c.relation, (c.first, c.second)))
            .collect();
        RuleOracle {
            spec,
            edges,
            successors,
            function,
            composition_of,
        }
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("oracle serializes")
    }

    pub fn from_json(text: &str) -> Result<RuleOracle> {
        Ok(RuleOracle::new(serde_json::from_str(text)?))
    }

    fn triple_holds(&self, h: u32, r: u32, t: u32) -> bool {
        if self.edges.contains(&(h, r, t)) {
            return true;
        }
        match self.composition_of.get(&r) {
            Some(&(first, second)) => self
                .successors
                .get(&(first, h))
                .is_some_and(|mids| mids.iter().any(|&y| self.edges.contains(&(y, second, t)))),
            None => false,
        }
    }

    /// Value a rule prescribes for a fact with primary `(h, r, t)`, if the rule applies.
    fn rule_value(&self, rule: &QualifierRule, h: u32, r: u32, t: u32) -> Option<u32> {
        if !rule.relations.contains(&r) {
            return None;
        }
        let anchor = match rule.anchor {
            Anchor::Head => h,
            Anchor::Tail => t,
        };
        self.function.get(&(rule.via, anchor)).copied()
    }

    /// Qualifiers `(key, value)` that rules allow on the primary triple `(h, r, t)`.
    pub fn allowed_qualifiers(&self, h: u32, r: u32, t: u32) -> Vec<(u32, u32)> {
        self.spec
            .qualifier_rules
            .iter()
            .filter_map(|rule| self.rule_value(rule, h, r, t).map(|v| (rule.key, v)))
            .collect()
    }

    pub fn valid(&self, fact: &Fact) -> bool {
        let n_ent = self.spec.entity_group.len() as u32;
        if fact.components().any(|c| match c {
            crate::data::Component::Entity(e) => e.0 >= n_ent,
            crate::data::Component::Relation(r) => r.0 >= self.spec.relation_count,
        }) {
            return false;
        }
        let (h, r, t) = (fact.head.0, fact.rel.0, fact.tail.0);
        if !self.triple_holds(h, r, t) {
            return false;
        }
        // each qualifier must be produced by a distinct applicable rule
        let mut used = vec![false; self.spec.qualifier_rules.len()];
        'quals: for &(k, v) in &fact.qualifiers {
            for (i, rule) in self.spec.qualifier_rules.iter().enumerate() {
                if !used[i] && rule.key == k.0 && self.rule_value(rule, h, r, t) == Some(v.0) {
                    used[i] = true;
                    continue 'quals;
                }
            }
            return false;
        }
        true
    }
}

struct Resolved {
    group_offset: Vec<usize>,
    group_size: Vec<usize>,
    relation_index: HashMap<String, u32>,
}

fn resolve(config: &SynthConfig) -> Result<Resolved> {
    let mut group_index = HashMap::new();
    let mut group_offset = Vec::new();
    let mut group_size = Vec::new();
    let mut offset = 0;
    for (i, g) in config.groups.iter().enumerate() {
        if g.size == 0 {
            return Err(Error::Config(format!("group `{}` is empty", g.name)));
        }
        if group_index.insert(g.name.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate group `{}`", g.name)));
        }
        group_offset.push(offset);
        group_size.push(g.size);
        offset += g.size;
    }
    let mut relation_index = HashMap::new();
    let names = config
        .base_relations
        .iter()
        .map(|b| &b.name)
        .chain(config.composed_relations.iter().map(|c| &c.name));
    for (i, name) in names.enumerate() {
        if relation_index.insert(name.clone(), i as u32).is_some() {
            return Err(Error::Config(format!("duplicate relation `{name}`")));
        }
    }
    for b in &config.base_relations {
        for g in [&b.domain, &b.range] {
            if !group_index.contains_key(g) {
                return Err(Error::Config(format!("relation `{}` uses unknown group `{g}`", b.name)));
            }
        }
        let range = group_size[group_index[&b.range]];
        let available = if b.domain == b.range { range - 1 } else { range };
        if b.out_degree == 0 || b.out_degree > available {
            return Err(Error::Infeasible(format!(
                "relation `{}` needs out-degree {} but only {available} targets exist",
                b.name, b.out_degree
            )));
        }
    }
    let base_of = |name: &str| config.base_relations.iter().find(|b| b.name == name);
    for c in &config.composed_relations {
        let (Some(a), Some(b)) = (base_of(&c.first), base_of(&c.second)) else {
            return Err(Error::Config(format!(
                "composed relation `{}` must compose two base relations",
                c.name
            )));
        };
        if a.range != b.domain {
            return Err(Error::Config(format!(
                "composed relation `{}`: range of `{}` is not the domain of `{}`",
                c.name, a.name, b.name
            )));
        }
    }
    for rule in &config.qualifier_rules {
        let via = base_of(&rule.via)
            .ok_or_else(|| Error::Config(format!("qualifier via `{}` is not a base relation", rule.via)))?;
        if via.out_degree != 1 {
            return Err(Error::Config(format!("qualifier via `{}` must be functional", rule.via)));
        }
        if !relation_index.contains_key(&rule.key) {
            return Err(Error::Config(format!("unknown qualifier key `{}`", rule.key)));
        }
        for r in &rule.relations {
            if !relation_index.contains_key(r) {
                return Err(Error::Config(format!("qualifier rule names unknown relation `{r}`")));
            }
        }
    }
    let fractions = [config.valid_fraction, config.test_fraction];
    if fractions.iter().any(|f| !(0.0..1.0).contains(f)) || fractions.iter().sum::<f64>() >= 1.0 {
        return Err(Error::Config("split fractions must lie in [0, 1) and sum below 1".into()));
    }
    if !(0.0..=1.0).contains(&config.qualifier_rate) {
        return Err(Error::Config("qualifier_rate must lie in [0, 1]".into()));
    }
    Ok(Resolved {
        group_offset,
        group_size,
        relation_index,
    })
}

/// Generate a dataset and the oracle that certifies it.
pub fn generate_synthetic_hkg(config: &SynthConfig) -> Result<(Dataset, RuleOracle)> {
    let resolved = resolve(config)?;
    let group_pos: HashMap<&str, usize> = config
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.name.as_str(), i))
        .collect();
    let members = |g: &str| {
        let gi = group_pos[g];
        let off = resolved.group_offset[gi];
        (off..off + resolved.group_size[gi]).map(|e| e as u32)
    };

    let n_rel = config.base_relations.len() + config.composed_relations.len();
    let mut base_edges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_rel];
    let mut rng = substream(config.seed, "synth.edges", 0);
    for (ri, b) in config.base_relations.iter().enumerate() {
        let targets: Vec<u32> = members(&b.range).collect();
        for h in members(&b.domain) {
            let pool: Vec<u32> = targets.iter().copied().filter(|&t| t != h).collect();
            let mut picks: Vec<u32> = index::sample(&mut rng, pool.len(), b.out_degree)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picks.sort_unstable();
            base_edges[ri].extend(picks.into_iter().map(|t| (h, t)));
        }
    }

    let compositions: Vec<Composition> = config
        .composed_relations
        .iter()
        .map(|c| Composition {
            relation: resolved.relation_index[&c.name],
            first: resolved.relation_index[&c.first],
            second: resolved.relation_index[&c.second],
        })
        .collect();
    let qualifier_rules: Vec<QualifierRule> = config
        .qualifier_rules
        .iter()
        .map(|q| QualifierRule {
            relations: q.relations.iter().map(|r| resolved.relation_index[r]).collect(),
            key: resolved.relation_index[&q.key],
            via: resolved.relation_index[&q.via],
            anchor: q.anchor,
        })
        .collect();

    let mut entity_group = Vec::new();
    for (gi, g) in config.groups.iter().enumerate() {
        entity_group.extend(std::iter::repeat_n(gi as u32, g.size));
    }
    let oracle = RuleOracle::new(OracleSpec {
        entity_group,
        relation_count: n_rel as u32,
        base_edges: base_edges.clone(),
        compositions: compositions.clone(),
        qualifier_rules,
    });

    // composed closure, in deterministic order
    let mut composed: Vec<(u32, u32, u32)> = Vec::new();
    for c in &compositions {
        let mut derived = BTreeSet::new();
        for &(x, y) in &base_edges[c.first as usize] {
            if let Some(zs) = oracle.successors.get(&(c.second, y)) {
                derived.extend(zs.iter().map(|&z| (x, z)));
            }
        }
        composed.extend(derived.into_iter().map(|(x, z)| (x, c.relation, z)));
    }
    let base: Vec<(u32, u32, u32)> = base_edges
        .iter()
        .enumerate()
        .flat_map(|(r, list)| list.iter().map(move |&(h, t)| (h, r as u32, t)))
        .collect();

    let mut rng = substream(config.seed, "synth.split", 0);
    if let Some(cap) = config.max_facts {
        if cap > base.len() + composed.len() {
            return Err(Error::Infeasible(format!(
                "requested {cap} facts but the rules admit only {}",
                base.len() + composed.len()
            )));
        }
        if cap < base.len() {
            return Err(Error::Infeasible(format!(
                "requested {cap} facts but {} base facts are required as premises",
                base.len()
            )));
        }
        composed.shuffle(&mut rng);
        composed.truncate(cap - base.len());
        composed.sort_unstable_by_key(|&(h, r, t)| (r, h, t));
    }
    let held_out_fraction = config.valid_fraction + config.test_fraction;
    if held_out_fraction > 0.0 && composed.is_empty() {
        return Err(Error::Infeasible("held-out splits requested but no composed facts exist".into()));
    }

    let mut qrng = substream(config.seed, "synth.qualifiers", 0);
    let mut realize = |(h, r, t): (u32, u32, u32)| {
        let mut fact = Fact::triple(h, r, t);
        for (k, v) in oracle.allowed_qualifiers(h, r, t) {
            if qrng.random::<f64>() < config.qualifier_rate {
                fact = fact.with_qualifier(k, v);
            }
        }
        fact
    };
    let mut train: Vec<Fact> = base.into_iter().map(&mut realize).collect();
    let mut composed: Vec<Fact> = composed.into_iter().map(&mut realize).collect();
    composed.shuffle(&mut rng);
    let n_valid = (config.valid_fraction * composed.len() as f64).round() as usize;
    let n_test = (config.test_fraction * composed.len() as f64).round() as usize;
    let test = composed.split_off(composed.len() - n_test);
    let valid = composed.split_off(composed.len() - n_valid);
    train.extend(composed);
    train.shuffle(&mut rng);

    let mut entities = Vec::new();
    for g in &config.groups {
        entities.extend((0..g.size).map(|i| format!("{}_{i}", g.name)));
    }
    let relations = config
        .base_relations
        .iter()
        .map(|b| b.name.clone())
        .chain(config.composed_relations.iter().map(|c| c.name.clone()))
        .collect();
    let dataset = Dataset::new(Vocab::from_names(entities, relations)?, train, valid, test)?;
    Ok((dataset, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_config_is_desk_scale() {
        let (ds, _) = generate_synthetic_hkg(&SynthConfig::default()).unwrap();
        assert_eq!(ds.vocab.entity_count(), 200);
        assert_eq!(ds.vocab.relation_count(), 8);
        assert!((2500..3500).contains(&ds.train.len()), "train = {}", ds.train.len());
        assert!(!ds.valid.is_empty() && !ds.test.is_empty());
    }

    #[test]
    fn every_fact_is_valid() {
        let (ds, oracle) = generate_synthetic_hkg(&SynthConfig::default()).unwrap();
        for f in ds.all_facts() {
            assert!(oracle.valid(f), "{f}");
        }
    }

    #[test]
    fn splits_are_disjoint_and_held_out_is_derived() {
        let cfg = SynthConfig::default();
        let (ds, oracle) = generate_synthetic_hkg(&cfg).unwrap();
        let train: HashSet<_> = ds.train.iter().collect();
        let composed: HashSet<u32> = oracle.spec().compositions.iter().map(|c| c.relation).collect();
        for f in ds.valid.iter().chain(&ds.test) {
            assert!(!train.contains(f));
            assert!(composed.contains(&f.rel.0));
        }
    }

    #[test]
    fn oracle_rejects_corruptions() {
        let (ds, oracle) = generate_synthetic_hkg(&SynthConfig::default()).unwrap();
        let f = ds.train.iter().find(|f| f.n_qualifiers() == 1).unwrap().clone();
        let mut wrong_value = f.clone();
        wrong_value.set_component(4, (f.qualifiers[0].1 .0 + 1) % 200);
        assert!(!oracle.valid(&wrong_value));
        let mut doubled = f.clone();
        doubled.qualifiers.push(f.qualifiers[0]);
        assert!(!oracle.valid(&doubled));
        // type-violating triple: head from the smallest group
        assert!(!oracle.valid(&Fact::triple(199, 0, 80)));
        assert!(!oracle.valid(&Fact::triple(0, 99, 1)));
    }

    #[test]
    fn deterministic_for_seed() {
        let (a, _) = generate_synthetic_hkg(&SynthConfig::default()).unwrap();
        let (b, _) = generate_synthetic_hkg(&SynthConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let other = SynthConfig {
            seed: 8,
            ..SynthConfig::default()
        };
        let (c, _) = generate_synthetic_hkg(&other).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn qualifier_rate_matches_length_distribution() {
        // larger graph: > 10^4 facts
        let mut cfg = SynthConfig::default();
        for g in &mut cfg.groups {
            g.size *= 4;
        }
        cfg.qualifier_rate = 0.4;
        let (ds, oracle) = generate_synthetic_hkg(&cfg).unwrap();
        let facts: Vec<&Fact> = ds.all_facts().collect();
        assert!(facts.len() >= 10_000, "{}", facts.len());
        let (mut applicable, mut attached) = (0usize, 0usize);
        for f in &facts {
            applicable += oracle.allowed_qualifiers(f.head.0, f.rel.0, f.tail.0).len();
            attached += f.n_qualifiers();
        }
        let rate = attached as f64 / applicable as f64;
        assert!((rate - 0.4).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn infeasible_configs() {
        let mut cfg = SynthConfig::default();
        cfg.max_facts = Some(1_000_000);
        assert!(matches!(generate_synthetic_hkg(&cfg), Err(Error::Infeasible(_))));
        let mut cfg = SynthConfig::default();
        cfg.base_relations[3].out_degree = 21;
        assert!(matches!(generate_synthetic_hkg(&cfg), Err(Error::Infeasible(_))));
        let mut cfg = SynthConfig::default();
        cfg.composed_relations[0].second = "b2".into();
        assert!(matches!(generate_synthetic_hkg(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn max_facts_caps_output() {
        let mut cfg = SynthConfig::default();
        cfg.max_facts = Some(2000);
        let (ds, oracle) = generate_synthetic_hkg(&cfg).unwrap();
        assert_eq!(ds.all_facts().count(), 2000);
        assert!(ds.all_facts().all(|f| oracle.valid(f)));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = SynthConfig::default();
        assert_eq!(SynthConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let bad = format!("{}\nbogus = 1\n", "seed = 1");
        assert!(SynthConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn oracle_json_round_trip() {
        let (ds, oracle) = generate_synthetic_hkg(&SynthConfig::default()).unwrap();
        let back = RuleOracle::from_json(&oracle.to_json()).unwrap();
        assert!(ds.test.iter().all(|f| back.valid(f)));
    }
}
