use std::collections::HashMap;

use crate::data::fact::{Fact, Kind};
use crate::error::{Error, Result};

/// Fixed entity and relation inventories, optionally with display names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_lookup: HashMap<String, u32>,
    relation_lookup: HashMap<String, u32>,
    entity_count: usize,
    relation_count: usize,
}

impl Vocab {
    /// Anonymous vocabulary; labels are rendered as `e<i>` / `r<i>`.
    pub fn with_sizes(entity_count: usize, relation_count: usize) -> Vocab {
        let entities = (0..entity_count).map(|i| format!("e{i}")).collect();
        let relations = (0..relation_count).map(|i| format!("r{i}")).collect();
        Vocab::from_names(entities, relations).expect("generated names are unique")
    }

    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Vocab> {
        let entity_lookup = build_lookup(&entities, "entity")?;
        let relation_lookup = build_lookup(&relations, "relation")?;
        Ok(Vocab {
            entity_count: entities.len(),
            relation_count: relations.len(),
            entity_names: entities,
            relation_names: relations,
            entity_lookup,
            relation_lookup,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn count(&self, kind: Kind) -> usize {
        match kind {
            Kind::Entity => self.entity_count,
            Kind::Relation => self.relation_count,
        }
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_name(&self, idx: u32) -> &str {
        &self.entity_names[idx as usize]
    }

    pub fn relation_name(&self, idx: u32) -> &str {
        &self.relation_names[idx as usize]
    }

    pub fn name(&self, kind: Kind, idx: u32) -> &str {
        match kind {
            Kind::Entity => self.entity_name(idx),
            Kind::Relation => self.relation_name(idx),
        }
    }

    pub fn entity(&self, label: &str) -> Option<u32> {
        self.entity_lookup.get(label).copied()
    }

    pub fn relation(&self, label: &str) -> Option<u32> {
        self.relation_lookup.get(label).copied()
    }

    pub fn check_fact(&self, fact: &Fact) -> Result<()> {
        for comp in fact.components() {
            let size = self.count(comp.kind());
            if comp.raw() as usize >= size {
                return Err(Error::OutOfVocab {
                    kind: comp.kind().as_str(),
                    index: comp.raw() as usize,
                    size,
                });
            }
        }
        Ok(())
    }
}

fn build_lookup(names: &[String], kind: &'static str) -> Result<HashMap<String, u32>> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if map.insert(name.clone(), i as u32).is_some() {
            return Err(Error::Config(format!("duplicate {kind} label `{name}`")));
        }
    }
    Ok(map)
}
