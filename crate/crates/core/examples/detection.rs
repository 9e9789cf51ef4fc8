//! Scores a composed scene with the glyph encoder and detector under each
//! fusion rule.
//!
//!     cargo run --example detection

use std::path::Path;

use cisbench::detection::{FusionRule, GlyphDetector, GlyphEncoder, Scorer, Thresholds};
use cisbench::generation::mock::composite_mock;
use cisbench::generation::mock::MockSceneSpec;
use cisbench::glyph::GlyphAtlas;
use cisbench::registry::{load_registry, Concept};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let registry = load_registry(&data.join("registry.jsonl"))?;
    let atlas = GlyphAtlas::from_registry(&registry);

    // Two of the three expected components are drawn.
    let scene = MockSceneSpec::new(256, 128)
        .plant("flag_usa", 8, 8, 1.0)
        .plant("injera", 128, 8, 1.0);
    let (png, truth) = composite_mock(&scene, &atlas, 0)?;
    let expected: Vec<&Concept> = ["flag_usa", "injera", "jeepney"]
        .iter()
        .map(|id| registry.get(id).expect("known concept"))
        .collect();

    let encoder = GlyphEncoder::new(&registry, 0.02);
    let detector = GlyphDetector::new(&registry);
    for rule in [
        FusionRule::Disjunctive,
        FusionRule::Conjunctive,
        FusionRule::Weighted {
            similarity_weight: 0.5,
            threshold: 0.4,
        },
    ] {
        let scorer = Scorer {
            encoder: &encoder,
            detector: &detector,
            thresholds: Thresholds::default(),
            rule,
        };
        let r = scorer.score("demo", 0, &png, &expected)?;
        println!("{rule:?}: included {:?}", r.included);
        for (id, sim) in &r.similarity {
            println!("  {id:<12} sim {sim:.3}");
        }
    }
    println!("planted: {truth:?}");
    Ok(())
}
