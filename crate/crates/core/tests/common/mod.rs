#![allow(dead_code)]

pub mod oracles;

use std::fs;
use std::path::{Path, PathBuf};

use cisbench::registry::{load_registry, Category, Concept, ConceptRegistry, Group};
use cisbench::suite::{permutation_rank, stratum_key, GroupProfile, Prompt, PromptCategory};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join("data")
}

pub fn example_registry() -> ConceptRegistry {
    load_registry(&data_dir().join("registry.jsonl")).expect("example registry loads")
}

/// Three mainstream and three marginalized concepts.
pub fn small_registry() -> ConceptRegistry {
    ConceptRegistry::from_concepts(vec![
        Concept::new("big_ben", "Big Ben", Category::Monuments, Group::Mainstream),
        Concept::new("eiffel", "Eiffel Tower", Category::Monuments, Group::Mainstream),
        Concept::new("flag_fr", "French flag", Category::Flags, Group::Mainstream),
        Concept::new("vesak", "Vesak lantern", Category::Other, Group::Marginalized),
        Concept::new("flag_bt", "flag of Bhutan", Category::Flags, Group::Marginalized),
        Concept::new("jeepney", "jeepney", Category::Vehicles, Group::Marginalized),
    ])
    .unwrap()
}

/// Hand-built prompt; the category follows K.
pub fn prompt(id: &str, components: &[&str], registry: &ConceptRegistry) -> Prompt {
    let profile = GroupProfile::of(components.iter().map(|c| registry.get(c).unwrap()));
    let category = match components.len() {
        1 => PromptCategory::Base,
        2 => PromptCategory::Pair,
        _ => PromptCategory::Trio,
    };
    Prompt {
        id: id.to_string(),
        category,
        components: components.iter().map(|s| s.to_string()).collect(),
        ordering_index: rank_of(components),
        context_tag: None,
        context_text: None,
        text: components.join(" and "),
        group_profile: profile,
        stratum: stratum_key(category, &profile, components.len()),
    }
}

fn rank_of(components: &[&str]) -> u64 {
    let mut sorted = components.to_vec();
    sorted.sort();
    let perm: Vec<usize> = components
        .iter()
        .map(|c| sorted.iter().position(|s| s == c).unwrap())
        .collect();
    permutation_rank(&perm)
}

/// Copies the example registry into `dir` and writes `config.toml` there
/// with `body` appended to a registry line.
pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    fs::copy(data_dir().join("registry.jsonl"), dir.join("registry.jsonl")).unwrap();
    let path = dir.join("config.toml");
    fs::write(&path, format!("registry = \"registry.jsonl\"\n{body}")).unwrap();
    path
}

/// A small mock run: 12 prompts, 3 images each.
pub const SMALL_RUN: &str = r#"
images_per_prompt = 3
orderings = 2

[suite.budget]
base = 4
pair = 4
trio = 2
contextual = 2

[[suite.contexts]]
tag = "festival"
text = "during a traditional festival"

[backend]
kind = "mock"

[backend.world]
omit_mainstream = 0.1
omit_marginalized = 0.3

[seeds]
suite = 3
generation = 5
bootstrap = 9

[bootstrap]
resamples = 200
confidence = 0.9
"#;

/// Run outputs and records as (relative path, bytes), sorted. Leaves out
/// the manifest, the cache, and generation records (they carry wall-clock
/// timestamps).
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "records"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if path.is_dir() || name == "manifest.json" || name == "generation.jsonl" {
                continue;
            }
            let rel = if sub.is_empty() {
                name
            } else {
                format!("{sub}/{name}")
            };
            out.push((rel, fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

/// Mean and standard deviation of a binomial proportion.
pub fn binomial_bounds(p: f64, n: usize) -> (f64, f64) {
    (p, (p * (1.0 - p) / n as f64).sqrt())
}
