//! Concept catalog and lookup tables.
//!
//! A [`ConceptRegistry`] holds every concept a prompt may name, tagged with a
//! category and a group (mainstream or marginalized). A [`LookupTable`] maps
//! each prompt id to the set of concepts the generated image is expected to
//! contain, and to the detector labels that count as evidence for them.
//!
//! Both files are JSON Lines: one record per line, UTF-8.
//!
//! Registry record fields: `id`, `label`, `category`, `group`, `aliases`,
//! `detector_labels`. Lookup record fields: `prompt_id`, `k`, `components`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error at line {line} ({row}): {message}")]
    Schema {
        line: usize,
        row: String,
        message: String,
    },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Flags,
    Monuments,
    Vehicles,
    Food,
    Clothing,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Flags,
        Category::Monuments,
        Category::Vehicles,
        Category::Food,
        Category::Clothing,
        Category::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Flags => "flags",
            Category::Monuments => "monuments",
            Category::Vehicles => "vehicles",
            Category::Food => "food",
            Category::Clothing => "clothing",
            Category::Other => "other",
        }
    }

    /// Title-case name used in rendered tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            Category::Flags => "Flags",
            Category::Monuments => "Monuments",
            Category::Vehicles => "Vehicles",
            Category::Food => "Food",
            Category::Clothing => "Clothing Items",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Mainstream,
    Marginalized,
}

impl Group {
    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Mainstream => "mainstream",
            Group::Marginalized => "marginalized",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concept {
    pub id: String,
    pub label: String,
    pub category: Category,
    pub group: Group,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub detector_labels: BTreeSet<String>,
}

impl Concept {
    pub fn new(id: &str, label: &str, category: Category, group: Group) -> Self {
        Self {
            id: id.to_string(),
            label: label.to_string(),
            category,
            group,
            aliases: Vec::new(),
            detector_labels: BTreeSet::from([id.to_string()]),
        }
    }

    /// Label followed by aliases; the surface strings that name this concept.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.label.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    /// Case-folded exact match against the label or any alias.
    pub fn matches_text(&self, text: &str) -> bool {
        let folded = text.to_lowercase();
        self.surface_forms().any(|s| s.to_lowercase() == folded)
    }
}

/// Concepts ordered by id. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConceptRegistry {
    concepts: Vec<Concept>,
}

impl ConceptRegistry {
    /// Builds a registry, enforcing the concept invariants.
    pub fn from_concepts(concepts: Vec<Concept>) -> Result<Self, RegistryError> {
        let registry = Self::unchecked(concepts);
        let mut seen = BTreeSet::new();
        for (i, c) in registry.concepts.iter().enumerate() {
            check_concept(c).map_err(|message| RegistryError::Schema {
                line: i + 1,
                row: c.id.clone(),
                message,
            })?;
            if !seen.insert(c.id.as_str()) {
                return Err(RegistryError::Schema {
                    line: i + 1,
                    row: c.id.clone(),
                    message: format!("duplicate id {:?}", c.id),
                });
            }
        }
        Ok(registry)
    }

    /// Builds a registry without checking invariants. Use [`validate_registry`]
    /// to list what is wrong with it.
    pub fn unchecked(mut concepts: Vec<Concept>) -> Self {
        concepts.sort_by(|a, b| a.id.cmp(&b.id));
        Self { concepts }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.concepts[i])
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter()
    }

    /// Concept whose label or alias equals `text` after case folding.
    pub fn find_by_text(&self, text: &str) -> Option<&Concept> {
        self.concepts.iter().find(|c| c.matches_text(text))
    }

    /// Lowest-id concept that lists `label` among its detector labels.
    pub fn concept_for_detector_label(&self, label: &str) -> Option<&Concept> {
        self.concepts.iter().find(|c| c.detector_labels.contains(label))
    }

    /// One JSON record per line, sorted by id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&serde_json::to_string(c).expect("concept serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

fn check_concept(c: &Concept) -> Result<(), String> {
    if c.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if c.detector_labels.is_empty() {
        return Err(format!("concept {:?} has empty detector_labels", c.id));
    }
    Ok(())
}

/// Parses a JSON Lines document into typed records. Syntax errors are
/// [`RegistryError::Parse`]; well-formed JSON that does not fit the record
/// type is [`RegistryError::Schema`].
fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, T)>, RegistryError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| RegistryError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let row = value
            .get("id")
            .or_else(|| value.get("prompt_id"))
            .and_then(|v| v.as_str())
            .unwrap_or("?")
            .to_string();
        let record = serde_json::from_value(value).map_err(|e| RegistryError::Schema {
            line: line_no,
            row,
            message: e.to_string(),
        })?;
        rows.push((line_no, record));
    }
    Ok(rows)
}

pub fn parse_registry(text: &str) -> Result<ConceptRegistry, RegistryError> {
    let rows: Vec<(usize, Concept)> = parse_jsonl(text)?;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut concepts = Vec::with_capacity(rows.len());
    for (line, c) in rows {
        check_concept(&c).map_err(|message| RegistryError::Schema {
            line,
            row: c.id.clone(),
            message,
        })?;
        if let Some(first) = seen.insert(c.id.clone(), line) {
            return Err(RegistryError::Schema {
                line,
                row: c.id.clone(),
                message: format!("duplicate id {:?} (first defined at line {first})", c.id),
            });
        }
        concepts.push(c);
    }
    Ok(ConceptRegistry::unchecked(concepts))
}

pub fn load_registry(path: &Path) -> Result<ConceptRegistry, RegistryError> {
    parse_registry(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupEntry {
    pub prompt_id: String,
    pub k: usize,
    pub components: Vec<String>,
}

/// Expected component sets per prompt, plus the detector vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LookupTable {
    pub entries: BTreeMap<String, LookupEntry>,
    /// Sorted, de-duplicated detector labels of every referenced concept.
    pub vocabulary: Vec<String>,
}

impl LookupTable {
    pub fn new(entries: Vec<LookupEntry>, registry: &ConceptRegistry) -> Self {
        let mut vocab = BTreeSet::new();
        for e in &entries {
            for id in &e.components {
                if let Some(c) = registry.get(id) {
                    vocab.extend(c.detector_labels.iter().cloned());
                }
            }
        }
        Self {
            entries: entries.into_iter().map(|e| (e.prompt_id.clone(), e)).collect(),
            vocabulary: vocab.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, prompt_id: &str) -> Result<&LookupEntry, RegistryError> {
        self.entries
            .get(prompt_id)
            .ok_or_else(|| RegistryError::NotFound(format!("prompt {prompt_id:?}")))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn parse_lookup(text: &str, registry: &ConceptRegistry) -> Result<LookupTable, RegistryError> {
    let rows: Vec<(usize, LookupEntry)> = parse_jsonl(text)?;
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(rows.len());
    for (line, e) in rows {
        if !seen.insert(e.prompt_id.clone()) {
            return Err(RegistryError::Schema {
                line,
                row: e.prompt_id.clone(),
                message: format!("duplicate prompt id {:?}", e.prompt_id),
            });
        }
        entries.push(e);
    }
    Ok(LookupTable::new(entries, registry))
}

pub fn load_lookup(path: &Path, registry: &ConceptRegistry) -> Result<LookupTable, RegistryError> {
    parse_lookup(&fs::read_to_string(path)?, registry)
}

/// Expected concept ids for a prompt, in canonical (sorted) order.
pub fn lookup_components(table: &LookupTable, prompt_id: &str) -> Result<BTreeSet<String>, RegistryError> {
    Ok(table.entry(prompt_id)?.components.iter().cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Lists every broken registry or lookup-table invariant. Empty means valid.
pub fn validate_registry(registry: &ConceptRegistry, table: &LookupTable) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity: String, rule: String| out.push(Violation { entity, rule });

    let mut ids = BTreeSet::new();
    for c in registry.iter() {
        let entity = format!("concept {:?}", c.id);
        if c.id.trim().is_empty() {
            push(entity.clone(), "id is empty".into());
        } else if !ids.insert(c.id.as_str()) {
            push(entity.clone(), "duplicate id".into());
        }
        if c.detector_labels.is_empty() {
            push(entity, "detector_labels is empty".into());
        }
    }

    for e in table.entries.values() {
        let entity = format!("prompt {:?}", e.prompt_id);
        let distinct: BTreeSet<&String> = e.components.iter().collect();
        if distinct.len() != e.components.len() {
            push(entity.clone(), "expected set has duplicate components".into());
        }
        if e.components.len() != e.k {
            push(
                entity.clone(),
                format!("expected-set size {} != K {}", e.components.len(), e.k),
            );
        }
        for id in &e.components {
            if registry.get(id).is_none() {
                push(entity.clone(), format!("unknown concept {id:?}"));
            }
        }
    }

    let mut vocab = BTreeSet::new();
    for label in &table.vocabulary {
        if !vocab.insert(label.as_str()) {
            push("vocabulary".into(), format!("duplicate label {label:?}"));
        }
    }
    let referenced: BTreeSet<&str> = table
        .entries
        .values()
        .flat_map(|e| e.components.iter().map(String::as_str))
        .collect();
    for id in referenced {
        if let Some(c) = registry.get(id) {
            for label in &c.detector_labels {
                if !vocab.contains(label.as_str()) {
                    push(
                        "vocabulary".into(),
                        format!("missing detector label {label:?} of concept {id:?}"),
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"id":"taj_mahal","label":"Taj Mahal","category":"monuments","group":"marginalized","aliases":["the Taj"],"detector_labels":["taj_mahal"]}
{"id":"big_ben","label":"Big Ben","category":"monuments","group":"mainstream","aliases":[],"detector_labels":["big_ben","clock_tower"]}
"#;

    fn registry() -> ConceptRegistry {
        parse_registry(TWO).unwrap()
    }

    #[test]
    fn loads_two_concepts() {
        let r = registry();
        assert_eq!(r.len(), 2);
        assert_eq!(r.concepts()[0].id, "big_ben");
        assert!(r.get("taj_mahal").unwrap().matches_text("THE TAJ"));
    }

    #[test]
    fn duplicate_id_is_schema_error() {
        let text = format!("{TWO}{}\n", TWO.lines().next().unwrap());
        match parse_registry(&text) {
            Err(RegistryError::Schema { row, line, .. }) => {
                assert_eq!(row, "taj_mahal");
                assert_eq!(line, 3);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_missing_fields() {
        assert!(matches!(
            parse_registry("{not json"),
            Err(RegistryError::Parse { line: 1, .. })
        ));
        let missing = r#"{"id":"x","label":"X","category":"food","detector_labels":["x"]}"#;
        match parse_registry(missing) {
            Err(RegistryError::Schema { row, message, .. }) => {
                assert_eq!(row, "x");
                assert!(message.contains("group"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let empty = r#"{"id":"x","label":"X","category":"food","group":"mainstream","detector_labels":[]}"#;
        assert!(matches!(parse_registry(empty), Err(RegistryError::Schema { .. })));
    }

    #[test]
    fn load_is_order_independent() {
        let reversed: String = TWO.lines().rev().map(|l| format!("{l}\n")).collect();
        assert_eq!(parse_registry(&reversed).unwrap(), registry());
    }

    #[test]
    fn lookup_hits_and_misses() {
        let r = registry();
        let table = LookupTable::new(
            vec![LookupEntry {
                prompt_id: "base-0001".into(),
                k: 1,
                components: vec!["big_ben".into()],
            }],
            &r,
        );
        assert_eq!(
            lookup_components(&table, "base-0001").unwrap(),
            BTreeSet::from(["big_ben".to_string()])
        );
        assert!(matches!(
            lookup_components(&table, "xyz"),
            Err(RegistryError::NotFound(_))
        ));
        assert_eq!(table.vocabulary, vec!["big_ben", "clock_tower"]);
        assert!(validate_registry(&r, &table).is_empty());
    }

    #[test]
    fn validation_reports_each_rule() {
        let r = registry();
        let table = LookupTable::new(
            vec![LookupEntry {
                prompt_id: "pair-0001".into(),
                k: 2,
                components: vec!["big_ben".into(), "taj_mahal".into(), "ghost".into()],
            }],
            &r,
        );
        let v = validate_registry(&r, &table);
        assert!(v.iter().any(|v| v.rule.contains("size 3 != K 2")));
        assert!(v.iter().any(|v| v.rule.contains("ghost")));
        assert_eq!(v, validate_registry(&r, &table));

        let mut bad = Concept::new("nolabel", "No Label", Category::Other, Group::Mainstream);
        bad.detector_labels.clear();
        let r2 = ConceptRegistry::unchecked(vec![bad]);
        let v2 = validate_registry(&r2, &LookupTable::default());
        assert_eq!(v2.len(), 1);
        assert!(v2[0].entity.contains("nolabel"));
    }
}
