use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mask_fact, sample_mask_pattern, Fact, Kind, MaskedQuery, Purpose};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Every slot masked; lengths follow the base-set distribution.
    Scratch,
    /// Test facts with exactly one component kept.
    Targeted,
    /// Test facts with a uniformly drawn mask pattern.
    Arbitrary,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Setting> {
        match s {
            "scratch" => Ok(Setting::Scratch),
            "targeted" => Ok(Setting::Targeted),
            "arbitrary" => Ok(Setting::Arbitrary),
            _ => Err(Error::Config(format!("unknown setting {s}; expected scratch, targeted or arbitrary"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SettingQuery {
    pub query: MaskedQuery,
    /// Test fact the query was cut from (none for scratch).
    pub source: Option<Fact>,
}

fn pick_facts<R: Rng + ?Sized>(facts: &[Fact], count: usize, rng: &mut R) -> Result<Vec<Fact>> {
    if facts.is_empty() {
        return Err(Error::Query("no facts to build queries from".into()));
    }
    Ok(if count <= facts.len() {
        sample(rng, facts.len(), count).into_iter().map(|i| facts[i].clone()).collect()
    } else {
        (0..count).map(|_| facts[rng.random_range(0..facts.len())].clone()).collect()
    })
}

/// `lengths` lists `(fact length, count)` of the base set.
pub fn build_setting_queries<R: Rng + ?Sized>(
    test_facts: &[Fact],
    setting: Setting,
    count: usize,
    lengths: &[(usize, usize)],
    rng: &mut R,
) -> Result<Vec<SettingQuery>> {
    if count == 0 {
        return Err(Error::Config("query count must be at least 1".into()));
    }
    match setting {
        Setting::Scratch => {
            let total: usize = lengths.iter().map(|&(_, c)| c).sum();
            if total == 0 {
                return Err(Error::Query("empty length distribution".into()));
            }
            if let Some(&(bad, _)) = lengths.iter().find(|&&(l, _)| l < 3 || l % 2 == 0) {
                return Err(Error::Query(format!("fact length {bad} is not 3 + 2n")));
            }
            Ok((0..count)
                .map(|_| {
                    let mut u = rng.random_range(0..total);
                    let mut len = lengths[0].0;
                    for &(l, c) in lengths {
                        if u < c {
                            len = l;
                            break;
                        }
                        u -= c;
                    }
                    SettingQuery {
                        query: MaskedQuery::fully_masked((len - 3) / 2),
                        source: None,
                    }
                })
                .collect())
        }
        Setting::Targeted => {
            let picked = pick_facts(test_facts, count, rng)?;
            picked
                .into_iter()
                .enumerate()
                .map(|(i, f)| {
                    let want = if i < count / 2 { Kind::Entity } else { Kind::Relation };
                    let candidates: Vec<usize> = (0..f.len()).filter(|&p| Kind::at_position(p) == want).collect();
                    let keep = candidates[rng.random_range(0..candidates.len())];
                    let masked: Vec<usize> = (0..f.len()).filter(|&p| p != keep).collect();
                    let (query, _) = mask_fact(&f, &masked, Purpose::Inference)?;
                    Ok(SettingQuery { query, source: Some(f) })
                })
                .collect()
        }
        Setting::Arbitrary => {
            let picked = pick_facts(test_facts, count, rng)?;
            picked
                .into_iter()
                .map(|f| {
                    let positions = sample_mask_pattern(&f, rng);
                    let (query, _) = mask_fact(&f, &positions, Purpose::Inference)?;
                    Ok(SettingQuery { query, source: Some(f) })
                })
                .collect()
        }
    }
}
