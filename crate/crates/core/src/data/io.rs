//! Line-oriented fact files and vocabulary files.
//!
//! A fact record is one compact JSON object per line:
//!
//! ```text
//! {"subject":"a","relation":"r","object":"b","qualifiers":[["k","v"]]}
//! ```
//!
//! `qualifiers` may also be given as a flat list `["k","v",...]`, which
//! must then have an even number of tokens. Records are always written in
//! the nested form shown above, so reading and re-writing a canonical file
//! reproduces it byte for byte. Vocabulary files hold one label per line;
//! the line number is the index.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::data::{Dataset, Fact, Vocab};
use crate::error::{Error, Result};

pub const ENTITIES_FILE: &str = "entities.txt";
pub const RELATIONS_FILE: &str = "relations.txt";
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str, line: usize) -> Result<&'a str> {
    obj.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(line, format!("missing string field `{name}`")))
}

fn entity(vocab: &Vocab, label: &str, line: usize) -> Result<u32> {
    vocab.entity(label).ok_or_else(|| Error::UnknownLabel {
        kind: "entity",
        label: label.to_string(),
        line,
    })
}

fn relation(vocab: &Vocab, label: &str, line: usize) -> Result<u32> {
    vocab.relation(label).ok_or_else(|| Error::UnknownLabel {
        kind: "relation",
        label: label.to_string(),
        line,
    })
}

/// Parse one fact record, resolving labels against `vocab`.
pub fn parse_fact_line(text: &str, vocab: &Vocab, line: usize) -> Result<Fact> {
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(line, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line, "record is not a JSON object"))?;
    let head = entity(vocab, field(obj, "subject", line)?, line)?;
    let rel = relation(vocab, field(obj, "relation", line)?, line)?;
    let tail = entity(vocab, field(obj, "object", line)?, line)?;
    let mut fact = Fact::triple(head, rel, tail);

    let quals = match obj.get("qualifiers") {
        None | Some(Value::Null) => return Ok(fact),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(malformed(line, "`qualifiers` must be a list")),
    };
    let mut tokens = Vec::with_capacity(quals.len() * 2);
    let nested = quals.iter().all(Value::is_array);
    if nested {
        for pair in quals {
            let pair = pair.as_array().expect("checked");
            if pair.len() != 2 {
                return Err(malformed(line, format!("qualifier pair with {} tokens", pair.len())));
            }
            tokens.extend(pair.iter());
        }
    } else {
        tokens.extend(quals.iter());
    }
    if tokens.len() % 2 != 0 {
        return Err(malformed(line, "odd number of qualifier tokens"));
    }
    for chunk in tokens.chunks(2) {
        let k = chunk[0]
            .as_str()
            .ok_or_else(|| malformed(line, "qualifier key is not a string"))?;
        let v = chunk[1]
            .as_str()
            .ok_or_else(|| malformed(line, "qualifier value is not a string"))?;
        fact = fact.with_qualifier(relation(vocab, k, line)?, entity(vocab, v, line)?);
    }
    Ok(fact)
}

#[derive(Serialize)]
struct Record<'a> {
    subject: &'a str,
    relation: &'a str,
    object: &'a str,
    qualifiers: Vec<[&'a str; 2]>,
}

/// Canonical single-line record for `fact`.
pub fn format_fact_line(fact: &Fact, vocab: &Vocab) -> String {
    let record = Record {
        subject: vocab.entity_name(fact.head.0),
        relation: vocab.relation_name(fact.rel.0),
        object: vocab.entity_name(fact.tail.0),
        qualifiers: fact
            .qualifiers
            .iter()
            .map(|(k, v)| [vocab.relation_name(k.0), vocab.entity_name(v.0)])
            .collect(),
    };
    serde_json::to_string(&record).expect("record serialization cannot fail")
}

pub fn read_facts(path: &Path, vocab: &Vocab) -> Result<Vec<Fact>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut facts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        facts.push(parse_fact_line(&line, vocab, i + 1)?);
    }
    Ok(facts)
}

pub fn write_facts(path: &Path, facts: &[Fact], vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for f in facts {
        out.push_str(&format_fact_line(f, vocab));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(l);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Write to a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let vocab = Vocab::from_names(
        read_labels(&dir.join(ENTITIES_FILE))?,
        read_labels(&dir.join(RELATIONS_FILE))?,
    )?;
    let split = |name: &str| -> Result<Vec<Fact>> {
        let path = dir.join(format!("{name}.jsonl"));
        if path.exists() {
            read_facts(&path, &vocab)
        } else {
            Ok(Vec::new())
        }
    };
    let (train, valid, test) = (split("train")?, split("valid")?, split("test")?);
    Dataset::new(vocab, train, valid, test)
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_labels(&dir.join(ENTITIES_FILE), dataset.vocab.entity_names())?;
    write_labels(&dir.join(RELATIONS_FILE), dataset.vocab.relation_names())?;
    for (name, facts) in SPLITS.iter().zip([&dataset.train, &dataset.valid, &dataset.test]) {
        write_facts(&dir.join(format!("{name}.jsonl")), facts, &dataset.vocab)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_names(
            vec!["A".into(), "B".into(), "C \"quoted\"".into(), "D".into()],
            vec!["r".into(), "k".into()],
        )
        .unwrap()
    }

    #[test]
    fn minimal_record() {
        let f = parse_fact_line(r#"{"subject":"A","relation":"r","object":"B"}"#, &vocab(), 1).unwrap();
        assert_eq!(f, Fact::triple(0, 0, 1));
        assert_eq!(f.n_qualifiers(), 0);
    }

    #[test]
    fn two_qualifier_pairs() {
        let line = r#"{"subject":"A","relation":"r","object":"B","qualifiers":[["k","C \"quoted\""],["r","D"]]}"#;
        let f = parse_fact_line(line, &vocab(), 1).unwrap();
        assert_eq!(f.n_qualifiers(), 2);
        assert_eq!(f.len(), 7);
        assert_eq!(format_fact_line(&f, &vocab()), line);
    }

    #[test]
    fn flat_qualifier_tokens() {
        let line = r#"{"subject":"A","relation":"r","object":"B","qualifiers":["k","C \"quoted\"","r","D"]}"#;
        assert_eq!(parse_fact_line(line, &vocab(), 1).unwrap().n_qualifiers(), 2);
        let odd = r#"{"subject":"A","relation":"r","object":"B","qualifiers":["k","D","r"]}"#;
        assert!(matches!(
            parse_fact_line(odd, &vocab(), 4),
            Err(Error::MalformedRecord { line: 4, .. })
        ));
        let short_pair = r#"{"subject":"A","relation":"r","object":"B","qualifiers":[["k"]]}"#;
        assert!(parse_fact_line(short_pair, &vocab(), 1).is_err());
    }

    #[test]
    fn unknown_labels_are_errors() {
        let line = r#"{"subject":"Z","relation":"r","object":"B","qualifiers":[]}"#;
        assert!(matches!(
            parse_fact_line(line, &vocab(), 2),
            Err(Error::UnknownLabel { kind: "entity", line: 2, .. })
        ));
        let line = r#"{"subject":"A","relation":"q","object":"B","qualifiers":[]}"#;
        assert!(matches!(
            parse_fact_line(line, &vocab(), 2),
            Err(Error::UnknownLabel { kind: "relation", .. })
        ));
    }

    #[test]
    fn malformed_json() {
        assert!(parse_fact_line("{not json", &vocab(), 1).is_err());
        assert!(parse_fact_line(r#"{"subject":"A","relation":"r"}"#, &vocab(), 1).is_err());
    }

    #[test]
    fn dataset_files_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            vocab(),
            vec![Fact::triple(0, 0, 1).with_qualifier(1, 3).with_qualifier(0, 2)],
            vec![Fact::triple(1, 1, 2)],
            vec![Fact::triple(3, 0, 0)],
        )
        .unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let first: Vec<Vec<u8>> = ["train.jsonl", "valid.jsonl", "test.jsonl", ENTITIES_FILE]
            .iter()
            .map(|f| fs::read(dir.path().join(f)).unwrap())
            .collect();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train[0].qualifiers, ds.train[0].qualifiers);
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(dir2.path(), &back).unwrap();
        let second: Vec<Vec<u8>> = ["train.jsonl", "valid.jsonl", "test.jsonl", ENTITIES_FILE]
            .iter()
            .map(|f| fs::read(dir2.path().join(f)).unwrap())
            .collect();
        assert_eq!(first, second);
    }
}
