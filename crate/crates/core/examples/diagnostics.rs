//! Attention entropy by layer and embedding overlap, both from the mock
//! world.
//!
//!     cargo run --example diagnostics

use std::path::Path;

use cisbench::diagnostics::{entropy_profile, within_group_overlap};
use cisbench::generation::mock::{MockBackend, MockWorld};
use cisbench::generation::Backend;
use cisbench::registry::load_registry;
use cisbench::suite::{build_suite, ProfileKind, PromptCategory, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let registry = load_registry(&data.join("registry.jsonl"))?;
    let mock = MockBackend::new(MockWorld::default(), registry.clone());

    let suite = build_suite(
        &registry,
        &SuiteSpec::with_budget(&[(PromptCategory::Pair, 8)]),
        5,
    )?;
    let mut traces = Vec::new();
    for p in &suite.prompts {
        traces.extend(mock.capture_attention(p, 0)?);
    }
    let profile = entropy_profile(&traces)?;
    let layers = profile.rows.iter().map(|r| r.layer).max().map_or(0, |l| l + 1);
    println!("layer  mainstream  marginalized");
    for layer in 0..layers {
        let cell = |kind| {
            profile
                .mean(layer, kind)
                .map_or("-".into(), |v| format!("{v:.3}"))
        };
        println!(
            "{layer:>5}  {:>10}  {:>12}",
            cell(ProfileKind::Mainstream),
            cell(ProfileKind::Marginalized)
        );
    }
    println!("peak layer {:?}, ratio {:?}", profile.peak_layer, profile.ratio);

    for set in mock.concept_embeddings(registry.concepts())? {
        let (overlap, d) = within_group_overlap(&set, 3)?;
        println!("{} within-group overlap (d = {d}): {overlap:.3}", set.group);
    }
    Ok(())
}
