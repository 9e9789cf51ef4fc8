mod common;

use std::collections::{BTreeMap, BTreeSet};

use cisbench::detection::{
    best_detection, calibrate_similarity_threshold, fuse_scores, score_components_similarity, Detection,
    DetectionError, Encoder, FusionRule, GlyphDetector, GlyphEncoder, Scorer, Thresholds,
};
use cisbench::generation::mock::{composite_mock, MockBackend, MockSceneSpec, MockWorld};
use cisbench::glyph::{GlyphAtlas, Region};
use cisbench::registry::{Category, Concept, Group};
use cisbench::suite::{build_suite, PromptCategory, SuiteSpec};
use proptest::prelude::*;

fn region() -> Region {
    Region {
        x0: 0,
        y0: 0,
        x1: 1,
        y1: 1,
    }
}

#[test]
fn stub_encoder_scores_visible_glyphs_only() {
    let reg = common::small_registry();
    let atlas = GlyphAtlas::from_registry(&reg);
    let scene = MockSceneSpec::new(128, 64)
        .plant("flag_fr", 4, 4, 1.0)
        .plant("jeepney", 64, 4, 1.0);
    let (png, _) = composite_mock(&scene, &atlas, 0).unwrap();
    let encoder = GlyphEncoder::new(&reg, 0.0);
    let expected: Vec<&Concept> = ["flag_fr", "jeepney", "big_ben"]
        .iter()
        .map(|id| reg.get(id).unwrap())
        .collect();
    let sims = score_components_similarity(&png, &expected, &encoder).unwrap();

    // Two visible glyphs: the image vector is (1, 1)/√2 on their axes.
    let oracle = 1.0 / 2f64.sqrt();
    let tau = Thresholds::default().sim;
    for id in ["flag_fr", "jeepney"] {
        assert!((sims[id] - oracle).abs() < 1e-12);
        assert!(sims[id] > tau);
    }
    assert_eq!(sims["big_ben"], 0.0);
    assert!(sims["big_ben"] < tau);
}

/// Embeds every text opposite to every image.
struct Opposed;

impl Encoder for Opposed {
    fn embed_image(&self, _image: &[u8]) -> Result<Vec<f64>, DetectionError> {
        Ok(vec![1.0, 0.0])
    }
    fn embed_text(&self, _text: &str) -> Result<Vec<f64>, DetectionError> {
        Ok(vec![-1.0, 0.0])
    }
}

#[test]
fn negative_cosine_clamps_to_zero() {
    let c = Concept::new("a", "a", Category::Other, Group::Mainstream);
    let sims = score_components_similarity(b"", &[&c], &Opposed).unwrap();
    assert_eq!(sims["a"], 0.0);
}

#[test]
fn face_detections_never_count() {
    let mut c = Concept::new("a", "a", Category::Other, Group::Mainstream);
    c.detector_labels.insert("person".into());
    let det = vec![Detection {
        label: "person".into(),
        confidence: 0.99,
        region: region(),
    }];
    assert_eq!(best_detection(&c, &det), 0.0);
}

#[test]
fn planted_subset_is_what_gets_included() {
    let reg = common::small_registry();
    let atlas = GlyphAtlas::from_registry(&reg);
    let scene = MockSceneSpec::new(192, 64)
        .plant("big_ben", 4, 4, 1.0)
        .plant("vesak", 64, 4, 1.0);
    let (png, _) = composite_mock(&scene, &atlas, 0).unwrap();
    let encoder = GlyphEncoder::new(&reg, 0.0);
    let detector = GlyphDetector::new(&reg);
    let expected: Vec<&Concept> = ["big_ben", "vesak", "jeepney"]
        .iter()
        .map(|id| reg.get(id).unwrap())
        .collect();
    for rule in [FusionRule::Disjunctive, FusionRule::Conjunctive] {
        let scorer = Scorer {
            encoder: &encoder,
            detector: &detector,
            thresholds: Thresholds::default(),
            rule,
        };
        let r = scorer.score("p", 0, &png, &expected).unwrap();
        assert_eq!(
            r.included,
            BTreeSet::from(["big_ben".to_string(), "vesak".to_string()])
        );
        // Replaying the stored channels gives the same decision.
        let again = r.refuse(&expected, r.thresholds, r.rule).unwrap();
        assert_eq!(again, r);
    }
}

#[test]
fn exact_detector_matches_ground_truth_on_500_images() {
    let reg = common::example_registry();
    let spec = SuiteSpec::with_budget(&[
        (PromptCategory::Base, 20),
        (PromptCategory::Pair, 50),
        (PromptCategory::Trio, 30),
    ]);
    let suite = build_suite(&reg, &spec, 5).unwrap();
    let world = MockWorld {
        omit_mainstream: 0.2,
        omit_marginalized: 0.4,
        ..MockWorld::default()
    };
    let mock = MockBackend::new(world, reg.clone());
    let encoder = GlyphEncoder::new(&reg, 0.0);
    let detector = GlyphDetector::new(&reg);
    let scorer = Scorer {
        encoder: &encoder,
        detector: &detector,
        thresholds: Thresholds::default(),
        rule: FusionRule::Disjunctive,
    };
    let mut images = 0;
    for p in &suite.prompts {
        let expected: Vec<&Concept> = p.components.iter().map(|id| reg.get(id).unwrap()).collect();
        for j in 0..5 {
            let (png, truth) = mock.compose(p, j).unwrap();
            let r = scorer.score(&p.id, j as usize, &png, &expected).unwrap();
            assert_eq!(r.included, truth, "{} image {j}", p.id);
            images += 1;
        }
    }
    assert_eq!(images, 500);
}

#[test]
fn invalid_thresholds_are_rejected() {
    let c = Concept::new("a", "a", Category::Other, Group::Mainstream);
    let sims = BTreeMap::from([("a".to_string(), 0.5)]);
    for t in [
        Thresholds { sim: 0.0, det: 0.5 },
        Thresholds { sim: 0.3, det: 1.0 },
    ] {
        assert!(matches!(
            fuse_scores(&sims, &[], &[&c], t, FusionRule::Disjunctive),
            Err(DetectionError::InvalidThresholds(_))
        ));
    }
    assert!(matches!(
        fuse_scores(
            &BTreeMap::new(),
            &[],
            &[&c],
            Thresholds::default(),
            FusionRule::Disjunctive
        ),
        Err(DetectionError::MissingSimilarity(_))
    ));
}

#[test]
fn calibration_separates_clean_samples() {
    let mut samples = vec![];
    for i in 0..50 {
        samples.push((0.5 + i as f64 / 200.0, true));
        samples.push((i as f64 / 500.0, false));
    }
    let c = calibrate_similarity_threshold(&samples).unwrap();
    assert_eq!(c.false_inclusion, 0.0);
    assert_eq!(c.false_omission, 0.0);
    assert!(c.tau > 0.098 && c.tau <= 0.5);
    assert!(calibrate_similarity_threshold(&[(0.3, true)]).is_none());
}

fn rule_strategy() -> impl Strategy<Value = FusionRule> {
    prop_oneof![
        Just(FusionRule::Disjunctive),
        Just(FusionRule::Conjunctive),
        (0.0..=1.0f64, 0.05..0.95f64).prop_map(|(w, t)| FusionRule::Weighted {
            similarity_weight: w,
            threshold: t,
        }),
    ]
}

fn included(sim: f64, det: f64, t: Thresholds, rule: FusionRule) -> bool {
    let c = Concept::new("a", "a", Category::Other, Group::Mainstream);
    let sims = BTreeMap::from([("a".to_string(), sim)]);
    let dets = vec![Detection {
        label: "a".into(),
        confidence: det,
        region: region(),
    }];
    fuse_scores(&sims, &dets, &[&c], t, rule)
        .unwrap()
        .included
        .contains("a")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fusion_is_monotone(
        sim in 0.0..=1.0f64,
        det in 0.0..=1.0f64,
        bump_sim in 0.0..=1.0f64,
        bump_det in 0.0..=1.0f64,
        tau_sim in 0.01..0.99f64,
        tau_det in 0.01..0.99f64,
        raise in 0.0..0.5f64,
        rule in rule_strategy(),
    ) {
        let t = Thresholds { sim: tau_sim, det: tau_det };
        let before = included(sim, det, t, rule);
        // Higher scores never drop a component.
        let sim2 = (sim + bump_sim).min(1.0);
        let det2 = (det + bump_det).min(1.0);
        if before {
            prop_assert!(included(sim2, det2, t, rule));
        }
        // Higher thresholds never add one.
        let t2 = Thresholds { sim: (tau_sim + raise).min(0.99), det: (tau_det + raise).min(0.99) };
        let rule2 = match rule {
            FusionRule::Weighted { similarity_weight, threshold } => FusionRule::Weighted {
                similarity_weight,
                threshold: (threshold + raise).min(0.99),
            },
            r => r,
        };
        if included(sim, det, t2, rule2) {
            prop_assert!(before);
        }
    }
}
