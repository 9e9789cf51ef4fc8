mod common;

use cisbench::generation::mock::{MockBackend, MockWorld};
use cisbench::metrics::{
    bootstrap_ci, build_report, cis_k, contextual_degradation, format_sensitivity, group_disparity,
    image_score, order_sensitivity, pearson_correlation, BootstrapSettings, ImageScore, MetricsError,
};
use cisbench::suite::Prompt;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn score(prompt: &str, j: usize, included: usize, k: usize) -> ImageScore {
    ImageScore {
        prompt_id: prompt.to_string(),
        image_index: j,
        image_hash: format!("{prompt}-{j}"),
        k,
        included_count: included,
    }
}

#[test]
fn image_scores_are_exact() {
    assert_eq!(image_score(2, 3).unwrap(), Ratio::new(2, 3));
    assert_eq!(image_score(0, 1).unwrap(), Ratio::new(0, 1));
    assert!(image_score(4, 3).is_err());
    assert!(image_score(0, 0).is_err());
}

#[test]
fn incomplete_grid_is_reported() {
    let mut scores: Vec<ImageScore> = (0..2)
        .flat_map(|p| (0..3).map(move |j| score(&format!("p{p}"), j, 1, 2)))
        .collect();
    assert_eq!(cis_k(&scores, 3).unwrap().exact, Ratio::new(1, 2));
    scores.pop();
    assert!(matches!(cis_k(&scores, 3), Err(MetricsError::IncompleteGrid(_))));
}

#[test]
fn published_table_deltas() {
    let rows = [
        ("Monuments", 0.88, 0.61, 31),
        ("Vehicles", 0.92, 0.73, 21),
        ("Flags", 0.88, 0.49, 44),
        ("Clothing", 0.71, 0.65, 8),
        ("Food", 0.87, 0.81, 7),
    ];
    for (name, m, g, want) in rows {
        assert_eq!(group_disparity(m, g).unwrap(), want, "{name}");
    }
    assert!(group_disparity(0.0, 0.5).is_err());
}

#[test]
fn order_sensitivity_fixtures() {
    assert_eq!(
        format_sensitivity(order_sensitivity(&[0.50, 0.78]).unwrap()),
        "±21.9%"
    );
    assert_eq!(
        format_sensitivity(order_sensitivity(&[0.6, 0.8]).unwrap()),
        "±14.3%"
    );
    assert_eq!(order_sensitivity(&[0.7, 0.7, 0.7]).unwrap(), 0.0);
}

#[test]
fn pearson_matches_the_direct_formula() {
    assert!(
        (pearson_correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap() - 0.9933992677987828).abs() < 1e-12
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let n = rng.gen_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.gen_range(-4.0..4.0)).collect();
        let oracle = common::oracles::pearson(&x, &y);
        let got = pearson_correlation(&x, &y).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }
    assert!(pearson_correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn bootstrap_width_matches_the_normal_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values: Vec<f64> = (0..1000)
        .map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 })
        .collect();
    let ci = bootstrap_ci(&values, 1000, 0.95, 7).unwrap();
    // 2 · 1.96 · sqrt(0.7 · 0.3 / 1000)
    let expected = 2.0 * 1.96 * (0.21f64 / 1000.0).sqrt();
    let width = ci.hi - ci.lo;
    assert!(
        (width - expected).abs() <= 0.2 * expected,
        "{width} vs {expected}"
    );
    assert!(ci.lo <= ci.mean && ci.mean <= ci.hi);
}

#[test]
fn contextual_penalty_is_recovered() {
    let reg = common::small_registry();
    let world = MockWorld {
        omit_mainstream: 0.1,
        omit_marginalized: 0.1,
        context_penalty: 0.2,
        ..MockWorld::default()
    };
    let mock = MockBackend::new(world, reg.clone());
    let plain = common::prompt("plain", &["big_ben"], &reg);
    let mut ctx: Prompt = plain.clone();
    ctx.id = "ctx".into();
    ctx.context_tag = Some("festival".into());

    let n = 2000;
    let rate = |p: &Prompt| {
        (0..n as u64)
            .filter(|&s| mock.ground_truth(p, s).unwrap().contains("big_ben"))
            .count() as f64
            / n as f64
    };
    let (base, context) = (rate(&plain), rate(&ctx));
    let d = contextual_degradation(base, context).unwrap();
    let drop = base - context;
    // Difference of two independent proportions, 0.9 and 0.7.
    let sd = ((0.9 * 0.1 + 0.7 * 0.3) / n as f64).sqrt();
    assert!((drop - 0.2).abs() <= 3.0 * sd, "drop {drop}, 3σ {}", 3.0 * sd);
    assert!(d.relative_percent > 0.0);
}

#[test]
fn report_strata_follow_the_scores() {
    use cisbench::metrics::PromptMeta;
    use cisbench::registry::{Category, Group};
    use cisbench::suite::PromptCategory;
    let meta = |id: &str, group: Group| PromptMeta {
        id: id.into(),
        category: PromptCategory::Base,
        stratum: format!("base/{group}/1"),
        group,
        k: 1,
        concept_category: Category::Flags,
        multiset_key: id.into(),
        variant: false,
    };
    let prompts = vec![meta("a", Group::Mainstream), meta("b", Group::Marginalized)];
    let scores: Vec<ImageScore> = (0..4)
        .map(|j| score("a", j, 1, 1))
        .chain((0..4).map(|j| score("b", j, usize::from(j % 2 == 0), 1)))
        .collect();
    let report = build_report(&prompts, &scores, 4, BootstrapSettings::default()).unwrap();
    let flags = report
        .disparity
        .iter()
        .find(|r| r.category == Category::Flags)
        .unwrap();
    assert_eq!(flags.mainstream.unwrap().cis, 1.0);
    assert_eq!(flags.marginalized.unwrap().cis, 0.5);
    assert_eq!(flags.delta_percent, Some(50));
}

proptest! {
    #[test]
    fn cis_ignores_score_order(
        seed in any::<u64>(),
        m in 1usize..8,
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let mut scores: Vec<ImageScore> = (0..m)
            .flat_map(|p| (0..n).map(move |j| (p, j)))
            .map(|(p, j)| score(&format!("p{p}"), j, rng.gen_range(0..=k), k))
            .collect();
        let a = cis_k(&scores, n).unwrap();
        scores.reverse();
        let b = cis_k(&scores, n).unwrap();
        prop_assert_eq!(a.exact, b.exact);
        prop_assert!(a.value() >= 0.0 && a.value() <= 1.0);
    }

    #[test]
    fn cis_rises_with_inclusions(seed in any::<u64>(), m in 1usize..8, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let mut scores: Vec<ImageScore> = (0..m)
            .flat_map(|p| (0..n).map(move |j| (p, j)))
            .map(|(p, j)| score(&format!("p{p}"), j, rng.gen_range(0..k), k))
            .collect();
        let before = cis_k(&scores, n).unwrap().exact;
        let i = rng.gen_range(0..scores.len());
        scores[i].included_count += 1;
        prop_assert!(cis_k(&scores, n).unwrap().exact > before);
    }

    #[test]
    fn bootstrap_ignores_value_order(seed in any::<u64>(), len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = bootstrap_ci(&values, 200, 0.9, 3).unwrap();
        values.reverse();
        prop_assert_eq!(a, bootstrap_ci(&values, 200, 0.9, 3).unwrap());
    }
}
