//! Generates cached images for one prompt on the mock world and shows
//! which components each image actually shows.
//!
//!     cargo run --example mock_generation

use std::path::Path;
use std::sync::Arc;

use cisbench::generation::mock::{MockBackend, MockWorld};
use cisbench::generation::{Backend, Generator};
use cisbench::registry::load_registry;
use cisbench::suite::{build_suite, PromptCategory, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let registry = load_registry(&data.join("registry.jsonl"))?;
    let suite = build_suite(
        &registry,
        &SuiteSpec::with_budget(&[(PromptCategory::Trio, 6)]),
        3,
    )?;
    let prompt = suite
        .prompts
        .iter()
        .max_by_key(|p| p.group_profile.marginalized)
        .expect("a trio prompt");

    let world = MockWorld {
        omit_marginalized: 0.4,
        ..MockWorld::default()
    };
    let mock = Arc::new(MockBackend::new(world, registry.clone()));
    let cache = std::env::temp_dir().join("cisbench-mock-generation");
    let generator = Generator::new(mock.clone(), &cache)?;

    println!("{}", prompt.text);
    for record in generator.generate(prompt, 4, 11)? {
        let truth = mock.ground_truth(prompt, record.seed)?;
        println!(
            "image {} seed {} {} shows {:?}",
            record.image_index,
            record.seed,
            &record.image_hash[..12],
            truth
        );
    }
    // A second pass is served from the cache.
    let before = mock.invocations();
    generator.generate(prompt, 4, 11)?;
    println!(
        "backend calls on the second pass: {}",
        mock.invocations() - before
    );
    println!("images under {}", cache.display());
    Ok(())
}
