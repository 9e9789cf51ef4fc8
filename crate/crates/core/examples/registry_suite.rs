//! Loads the example registry, builds a stratified suite and expands one
//! pair prompt into its component orderings.
//!
//!     cargo run --example registry_suite

use std::path::Path;

use cisbench::registry::{load_registry, validate_registry};
use cisbench::suite::{build_suite, enumerate_orderings, PromptCategory, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let registry = load_registry(&data.join("registry.jsonl"))?;
    println!("{} concepts", registry.len());

    let spec = SuiteSpec::with_budget(&[
        (PromptCategory::Base, 6),
        (PromptCategory::Pair, 4),
        (PromptCategory::Trio, 2),
    ]);
    let suite = build_suite(&registry, &spec, 7)?;
    let lookup = suite.lookup_table(&registry);
    assert!(validate_registry(&registry, &lookup).is_empty());

    for (stratum, ids) in &suite.strata {
        println!("{stratum:<28} {}", ids.len());
    }
    for p in suite.prompts.iter().take(4) {
        println!("{:<10} {}", p.id, p.text);
    }

    let pair = suite.prompts.iter().find(|p| p.k() == 2).expect("a pair prompt");
    let templates = spec.template_set()?;
    for v in enumerate_orderings(pair, 2, 7, &templates, &registry)? {
        println!("ordering {}: {}", v.ordering_index, v.text);
    }
    Ok(())
}
